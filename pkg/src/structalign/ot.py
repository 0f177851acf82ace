"""Entropic optimal transport: Sinkhorn scaling and Gromov-Wasserstein.

The Sinkhorn solver runs a fixed iteration budget (matrix scaling on the
Gibbs kernel), and the entropic GW solver iterates linearized pseudo-costs
around the current coupling, re-solving an inner transport problem until
the coupling stops moving.

Cost convention throughout: one minus cosine similarity, so zero cost
means identical direction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T


class ValidationError(ValueError):
    """A transport problem violates its preconditions."""


class UnderflowError(FloatingPointError):
    """The Gibbs kernel lost all mass in a row or column.

    Raised when exp(-cost/epsilon) underflows so badly that scaling cannot
    recover; the fix is a larger epsilon.
    """


class ZeroNormError(ValueError):
    """An embedding row has zero norm, so cosine similarity is undefined."""


def _matrix_of(x) -> np.ndarray:
    # accept EmbeddingSet-like objects or plain arrays
    m = np.asarray(getattr(x, "matrix", x), dtype=np.float64)
    if m.ndim != 2:
        raise ValidationError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def _unit_rows(m: np.ndarray, who: str) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ZeroNormError(f"{who}: zero-norm row at index {int(np.argmin(norms))}")
    return m / norms


def cosine_similarity_matrix(xs, ys) -> np.ndarray:
    x = _matrix_of(xs)
    y = _matrix_of(ys)
    if x.shape[1] != y.shape[1]:
        raise ValidationError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    return _unit_rows(x, "xs") @ _unit_rows(y, "ys").T


def cosine_cost_matrix(xs, ys) -> np.ndarray:
    """Pairwise cost 1 - cos(x_i, y_j); entries lie in [0, 2]."""
    return 1.0 - cosine_similarity_matrix(xs, ys)


def self_similarity(points) -> np.ndarray:
    """Cosine-distance structure of a point set: symmetric, zero diagonal."""
    m = _matrix_of(points)
    if m.shape[0] < 2:
        raise ValidationError("self_similarity needs at least 2 points")
    d = cosine_cost_matrix(m, m)
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return d


def uniform_weights(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


@dataclass
class TransportProblem:
    """A discrete entropic OT instance: cost matrix, marginals, temperature."""

    cost: np.ndarray
    mu: np.ndarray
    nu: np.ndarray
    epsilon: float = 1.0

    def validate(self) -> None:
        c = np.asarray(self.cost, dtype=np.float64)
        mu = np.asarray(self.mu, dtype=np.float64)
        nu = np.asarray(self.nu, dtype=np.float64)
        if c.ndim != 2:
            raise ValidationError(f"cost must be 2-D, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValidationError("cost contains non-finite entries")
        if mu.shape != (c.shape[0],) or nu.shape != (c.shape[1],):
            raise ValidationError(
                f"marginal shapes {mu.shape}/{nu.shape} do not match cost {c.shape}"
            )
        if np.any(mu < 0.0) or np.any(nu < 0.0):
            raise ValidationError("marginals must be nonnegative")
        if abs(mu.sum() - 1.0) > 1e-9 or abs(nu.sum() - 1.0) > 1e-9:
            raise ValidationError("marginals must each sum to 1 (within 1e-9)")
        if not self.epsilon > 0.0:
            raise ValidationError("epsilon must be positive")


@dataclass
class SinkhornState:
    """Final scaling vectors and kernel: plan = diag(a) @ kernel @ diag(b)."""

    a: np.ndarray
    b: np.ndarray
    kernel: np.ndarray


@dataclass
class TransportPlan:
    plan: np.ndarray
    value: float
    iterations: int
    residual: float
    state: SinkhornState

    @property
    def pairs(self) -> list[tuple[int, int]]:
        """Row-wise argmax matches, ties to the lowest column index."""
        return [(i, int(j)) for i, j in enumerate(np.argmax(self.plan, axis=1))]


def _gibbs_kernel(cost: np.ndarray, epsilon: float) -> np.ndarray:
    # constant shift is absorbed by the scalings; it only guards the exp range
    shifted = cost - cost.min()
    if shifted.max() / epsilon > 700.0:
        raise UnderflowError(
            "cost range too large for epsilon "
            f"({shifted.max():.3g} / {epsilon:.3g}); increase epsilon"
        )
    kernel = np.exp(shifted * (-1.0 / epsilon))
    if np.any(kernel.sum(axis=1) == 0.0) or np.any(kernel.sum(axis=0) == 0.0):
        raise UnderflowError("Gibbs kernel has an empty row or column; increase epsilon")
    return kernel


def _marginal_residual(plan: np.ndarray, mu: np.ndarray, nu: np.ndarray) -> float:
    return float(
        np.max(np.abs(plan.sum(axis=1) - mu)) + np.max(np.abs(plan.sum(axis=0) - nu))
    )


def sinkhorn(problem: TransportProblem, iterations: int = 100) -> TransportPlan:
    """Fixed-budget Sinkhorn matrix scaling.

    Returns the coupling, its transport value <plan, cost>, and the final
    scalings. Underflow (a zeroed kernel row/column or a zero normalizer)
    raises UnderflowError with the suggestion to raise epsilon.
    """
    problem.validate()
    if iterations < 1:
        raise ValidationError("iterations must be >= 1")
    cost = np.asarray(problem.cost, dtype=np.float64)
    mu = np.asarray(problem.mu, dtype=np.float64)
    nu = np.asarray(problem.nu, dtype=np.float64)
    kernel = _gibbs_kernel(cost, problem.epsilon)

    # column vectors keep the numpy route and the tape route on identical
    # BLAS paths, so their plans agree bit for bit
    mu_col = mu.reshape(-1, 1)
    nu_col = nu.reshape(-1, 1)
    kernel_t = kernel.T.copy()
    b = np.ones((cost.shape[1], 1))
    for _ in range(iterations):
        kb = kernel @ b
        if np.any(kb == 0.0):
            raise UnderflowError("Sinkhorn normalizer underflowed; increase epsilon")
        a = mu_col / kb
        ka = kernel_t @ a
        if np.any(ka == 0.0):
            raise UnderflowError("Sinkhorn normalizer underflowed; increase epsilon")
        b = nu_col / ka
    plan = (a * kernel) * b.T
    if not np.all(np.isfinite(plan)):
        raise UnderflowError("Sinkhorn plan is non-finite; increase epsilon")
    return TransportPlan(
        plan=plan,
        value=float(np.sum(plan * cost)),
        iterations=iterations,
        residual=_marginal_residual(plan, mu, nu),
        state=SinkhornState(a=a[:, 0], b=b[:, 0], kernel=kernel),
    )


def sinkhorn_plan_t(
    cost: T.Tensor,
    mu: np.ndarray,
    nu: np.ndarray,
    epsilon: float,
    iterations: int = 100,
) -> T.Tensor:
    """Tape-differentiable Sinkhorn, unrolled through every scaling step.

    Mirrors sinkhorn() op for op so both routes produce bit-identical
    plans on the same inputs.
    """
    n, m = cost.shape
    mu_c = T.constant(np.asarray(mu, dtype=np.float64).reshape(n, 1))
    nu_c = T.constant(np.asarray(nu, dtype=np.float64).reshape(m, 1))
    shift = float(cost.data.min())
    if (float(cost.data.max()) - shift) / epsilon > 700.0:
        raise UnderflowError("cost range too large for epsilon; increase epsilon")
    kernel = T.exp(T.mul_scalar(T.add_scalar(cost, -shift), -1.0 / epsilon))
    kd = kernel.data
    if np.any(kd.sum(axis=1) == 0.0) or np.any(kd.sum(axis=0) == 0.0):
        raise UnderflowError("Gibbs kernel has an empty row or column; increase epsilon")

    kernel_t = T.transpose(kernel)
    b = T.constant(np.ones((m, 1)))
    for _ in range(iterations):
        a = T.div(mu_c, T.matmul(kernel, b))
        b = T.div(nu_c, T.matmul(kernel_t, a))
    return T.scale_cols(T.scale_rows(kernel, a), T.transpose(b))


@dataclass
class GWResult:
    value: float
    plan: np.ndarray
    outer_iterations: int
    converged: bool
    residual: float = 0.0


def _sinkhorn_converged(
    cost: np.ndarray,
    mu: np.ndarray,
    nu: np.ndarray,
    epsilon: float,
    max_iterations: int,
    tol: float = 1e-12,
    b_init: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Inner solver for GW: fixed cap, but stops once marginals settle.

    Supports warm-starting the column scaling so successive outer rounds,
    whose costs barely move near convergence, finish in a few sweeps.
    """
    kernel = _gibbs_kernel(cost, epsilon)
    b = np.ones(cost.shape[1]) if b_init is None else b_init
    a = np.ones(cost.shape[0])
    for _ in range(max_iterations):
        kb = kernel @ b
        if np.any(kb == 0.0):
            raise UnderflowError("Sinkhorn normalizer underflowed; increase epsilon")
        a = mu / kb
        ka = kernel.T @ a
        if np.any(ka == 0.0):
            raise UnderflowError("Sinkhorn normalizer underflowed; increase epsilon")
        b = nu / ka
        plan = (a[:, None] * kernel) * b[None, :]
        if _marginal_residual(plan, mu, nu) < tol:
            break
    plan = (a[:, None] * kernel) * b[None, :]
    if not np.all(np.isfinite(plan)):
        raise UnderflowError("Sinkhorn plan is non-finite; increase epsilon")
    return plan, b


def entropic_gw(
    cx: np.ndarray,
    cy: np.ndarray,
    p: np.ndarray | None = None,
    q: np.ndarray | None = None,
    epsilon: float = 0.01,
    max_outer: int = 50,
    inner_iterations: int = 1000,
    tol: float = 1e-7,
) -> GWResult:
    """Entropic Gromov-Wasserstein distance between two metric structures.

    Minimizes sum_ijkl 0.5 * (cx[i,k] - cy[j,l])^2 * T[i,j] * T[k,l] over
    couplings T with marginals (p, q), by alternating a linearization of
    the quadratic objective with entropic transport solves. Stops when the
    coupling's Frobenius change drops below tol or after max_outer rounds.

    Returns the objective value of the final coupling (entropy excluded).
    """
    cx = np.asarray(cx, dtype=np.float64)
    cy = np.asarray(cy, dtype=np.float64)
    if cx.ndim != 2 or cx.shape[0] != cx.shape[1]:
        raise ValidationError(f"cx must be square, got {cx.shape}")
    if cy.ndim != 2 or cy.shape[0] != cy.shape[1]:
        raise ValidationError(f"cy must be square, got {cy.shape}")
    if not (np.all(np.isfinite(cx)) and np.all(np.isfinite(cy))):
        raise ValidationError("structure matrices must be finite")
    n, m = cx.shape[0], cy.shape[0]
    p = uniform_weights(n) if p is None else np.asarray(p, dtype=np.float64)
    q = uniform_weights(m) if q is None else np.asarray(q, dtype=np.float64)
    TransportProblem(cost=np.zeros((n, m)), mu=p, nu=q, epsilon=epsilon).validate()

    # L(a, b) = 0.5*(a-b)^2 split as f1(a) + f2(b) - h1(a)*h2(b)
    constant_part = (0.5 * cx**2) @ p[:, None] @ np.ones((1, m)) + np.ones(
        (n, 1)
    ) @ q[None, :] @ (0.5 * cy**2).T

    def objective_matrix(t: np.ndarray) -> np.ndarray:
        return constant_part - cx @ t @ cy.T

    coupling = np.outer(p, q)
    converged = False
    outer = 0
    b_warm = None
    for outer in range(1, max_outer + 1):
        pseudo_cost = 2.0 * objective_matrix(coupling)
        new_coupling, b_warm = _sinkhorn_converged(
            pseudo_cost, p, q, epsilon, inner_iterations, b_init=b_warm
        )
        delta = float(np.linalg.norm(new_coupling - coupling))
        coupling = new_coupling
        if delta < tol:
            converged = True
            break
    value = float(np.sum(objective_matrix(coupling) * coupling))
    return GWResult(
        value=value,
        plan=coupling,
        outer_iterations=outer,
        converged=converged,
        residual=_marginal_residual(coupling, p, q),
    )


def gw_distance(x_points, y_points, epsilon: float = 0.01) -> float:
    """GW distance between the cosine self-similarity structures of two sets."""
    return entropic_gw(self_similarity(x_points), self_similarity(y_points), epsilon=epsilon).value
