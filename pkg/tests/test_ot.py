"""Transport-layer tests: cosine costs, Sinkhorn, entropic GW.

Oracles used here and nowhere in the library:
  - a log-domain Sinkhorn written independently below,
  - the rank-1 scaling characterization of the entropic optimum,
  - brute-force quadruple sums and permutation sweeps for GW.
"""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from structalign import ot
from structalign import tensor as T
from fdutil import numerical_grad


def logdomain_sinkhorn(cost, mu, nu, epsilon, iterations):
    """Independent route: dual potentials via logsumexp updates."""
    f = np.zeros(len(mu))
    g = np.zeros(len(nu))
    logmu, lognu = np.log(mu), np.log(nu)
    for _ in range(iterations):
        m = (f[:, None] + g[None, :] - cost) / epsilon
        f = f + epsilon * (logmu - _lse_rows(m))
        m = (f[:, None] + g[None, :] - cost) / epsilon
        g = g + epsilon * (lognu - _lse_rows(m.T))
    return np.exp((f[:, None] + g[None, :] - cost) / epsilon)


def _lse_rows(m):
    hi = m.max(axis=1, keepdims=True)
    return (hi + np.log(np.exp(m - hi).sum(axis=1, keepdims=True)))[:, 0]


def random_problem(seed, n=6, m=5, epsilon=1.0):
    rng = np.random.default_rng(seed)
    cost = ot.cosine_cost_matrix(rng.normal(size=(n, 4)), rng.normal(size=(m, 4)))
    mu = rng.uniform(0.5, 2.0, n)
    mu /= mu.sum()
    nu = rng.uniform(0.5, 2.0, m)
    nu /= nu.sum()
    return ot.TransportProblem(cost=cost, mu=mu, nu=nu, epsilon=epsilon)


# ------------------------------------------------------------- cosine costs


def test_cosine_cost_hand_values():
    x = np.array([[1.0, 0.0], [0.0, 2.0]])
    y = np.array([[1.0, 0.0], [1.0, 1.0]])
    cost = ot.cosine_cost_matrix(x, y)
    s = 1.0 / np.sqrt(2.0)
    np.testing.assert_allclose(cost, [[0.0, 1.0 - s], [1.0, 1.0 - s]], atol=1e-15)


def test_cosine_cost_accepts_embedding_like_objects():
    class Holder:
        matrix = np.eye(3)

    cost = ot.cosine_cost_matrix(Holder(), Holder())
    np.testing.assert_allclose(np.diag(cost), np.zeros(3), atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_cosine_cost_range(seed):
    rng = np.random.default_rng(seed)
    cost = ot.cosine_cost_matrix(rng.normal(size=(4, 3)), rng.normal(size=(5, 3)))
    assert np.all(cost >= -1e-12) and np.all(cost <= 2.0 + 1e-12)


def test_cosine_cost_zero_row_raises():
    x = np.array([[1.0, 0.0], [0.0, 0.0]])
    with pytest.raises(ot.ZeroNormError):
        ot.cosine_cost_matrix(x, np.eye(2))


def test_cosine_cost_dim_mismatch_raises():
    with pytest.raises(ot.ValidationError):
        ot.cosine_cost_matrix(np.ones((2, 3)), np.ones((2, 4)))


def test_self_similarity_symmetric_zero_diagonal():
    rng = np.random.default_rng(5)
    d = ot.self_similarity(rng.normal(size=(7, 4)))
    np.testing.assert_array_equal(d, d.T)
    np.testing.assert_array_equal(np.diag(d), np.zeros(7))
    assert np.all(d >= 0.0)


def test_self_similarity_hand_value():
    d = ot.self_similarity(np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 3.0]]))
    s = 1.0 / np.sqrt(2.0)
    np.testing.assert_allclose(d[0, 1], 1.0 - s, atol=1e-15)
    np.testing.assert_allclose(d[0, 2], 1.0, atol=1e-15)
    np.testing.assert_allclose(d[1, 2], 1.0 - s, atol=1e-15)


# ------------------------------------------------------------------ sinkhorn


def test_sinkhorn_single_cell():
    prob = ot.TransportProblem(
        cost=np.array([[0.3]]), mu=np.array([1.0]), nu=np.array([1.0])
    )
    res = ot.sinkhorn(prob)
    np.testing.assert_allclose(res.plan, [[1.0]], atol=1e-12)
    assert res.value == pytest.approx(0.3)


@pytest.mark.parametrize("seed", range(5))
def test_sinkhorn_matches_logdomain_oracle(seed):
    prob = random_problem(seed)
    res = ot.sinkhorn(prob, iterations=200)
    want = logdomain_sinkhorn(prob.cost, prob.mu, prob.nu, prob.epsilon, 200)
    np.testing.assert_allclose(res.plan, want, atol=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_sinkhorn_plan_is_rank_one_scaling_of_kernel(seed):
    # the entropic optimum is the unique marginal-feasible diag(a) K diag(b);
    # equivalently log(plan) - log(K) must have additive rank-1 structure
    prob = random_problem(seed)
    res = ot.sinkhorn(prob)
    m = np.log(res.plan) - np.log(res.state.kernel)
    cross = m - m[:, :1] - m[:1, :] + m[0, 0]
    np.testing.assert_allclose(cross, np.zeros_like(m), atol=1e-10)


def test_sinkhorn_marginals_converge_at_defaults():
    prob = random_problem(11, n=50, m=50)
    res = ot.sinkhorn(prob)
    assert res.residual < 1e-6
    assert np.all(res.plan >= 0.0)


def test_sinkhorn_scalings_reproduce_plan():
    prob = random_problem(3)
    res = ot.sinkhorn(prob)
    rebuilt = res.state.a[:, None] * res.state.kernel * res.state.b[None, :]
    np.testing.assert_allclose(rebuilt, res.plan, atol=1e-12)


def test_sinkhorn_value_is_plan_dot_cost():
    prob = random_problem(4)
    res = ot.sinkhorn(prob)
    assert res.value == pytest.approx(float(np.sum(res.plan * prob.cost)), abs=1e-12)


def test_sinkhorn_underflow_suggests_larger_epsilon():
    rng = np.random.default_rng(0)
    cost = ot.cosine_cost_matrix(rng.normal(size=(4, 3)), rng.normal(size=(4, 3)))
    prob = ot.TransportProblem(
        cost=cost, mu=ot.uniform_weights(4), nu=ot.uniform_weights(4), epsilon=1e-4
    )
    with pytest.raises(ot.UnderflowError, match="epsilon"):
        ot.sinkhorn(prob)


def test_transport_problem_validation():
    good = random_problem(0)
    good.validate()
    bad = ot.TransportProblem(cost=good.cost, mu=-good.mu, nu=good.nu)
    with pytest.raises(ot.ValidationError):
        bad.validate()
    bad = ot.TransportProblem(cost=good.cost, mu=good.mu * 2.0, nu=good.nu)
    with pytest.raises(ot.ValidationError):
        bad.validate()
    bad = ot.TransportProblem(cost=good.cost[:, :3], mu=good.mu, nu=good.nu)
    with pytest.raises(ot.ValidationError):
        bad.validate()
    bad = ot.TransportProblem(cost=good.cost, mu=good.mu, nu=good.nu, epsilon=0.0)
    with pytest.raises(ot.ValidationError):
        bad.validate()
    nan_cost = good.cost.copy()
    nan_cost[0, 0] = np.nan
    bad = ot.TransportProblem(cost=nan_cost, mu=good.mu, nu=good.nu)
    with pytest.raises(ot.ValidationError):
        bad.validate()
    with pytest.raises(ot.ValidationError):
        ot.sinkhorn(good, iterations=0)


def test_plan_pairs_argmax_with_low_index_ties():
    plan = ot.TransportPlan(
        plan=np.array([[0.4, 0.4, 0.2], [0.1, 0.2, 0.7]]),
        value=0.0,
        iterations=0,
        residual=0.0,
        state=ot.SinkhornState(a=np.ones(2), b=np.ones(3), kernel=np.ones((2, 3))),
    )
    assert plan.pairs == [(0, 0), (1, 2)]


# ----------------------------------------------------------- tape route


@pytest.mark.parametrize("seed", range(3))
def test_tape_sinkhorn_bit_identical_to_numpy(seed):
    prob = random_problem(seed, n=8, m=7)
    res = ot.sinkhorn(prob, iterations=50)
    plan_t = ot.sinkhorn_plan_t(
        T.constant(prob.cost), prob.mu, prob.nu, prob.epsilon, iterations=50
    )
    assert np.array_equal(res.plan, plan_t.data)


@pytest.mark.parametrize("seed", range(3))
def test_tape_sinkhorn_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    cost0 = rng.uniform(0.0, 2.0, size=(4, 3))
    mu, nu = ot.uniform_weights(4), ot.uniform_weights(3)
    w = rng.normal(size=(4, 3))

    def loss_of(arrs):
        plan = ot.sinkhorn_plan_t(T.constant(arrs[0]), mu, nu, 0.5, iterations=40)
        return T.sum_all(T.mul(plan, T.constant(w))).item()

    cost_p = T.parameter(cost0)
    with T.Tape() as tape:
        plan = ot.sinkhorn_plan_t(cost_p, mu, nu, 0.5, iterations=40)
        loss = T.sum_all(T.mul(plan, T.constant(w)))
        (analytic,) = tape.backward(loss, [cost_p])
    (numeric,) = numerical_grad(loss_of, [cost0], h=1e-6)
    scale = max(1.0, float(np.max(np.abs(numeric))))
    assert float(np.max(np.abs(analytic - numeric))) / scale < 1e-6


# ---------------------------------------------------------------- entropic GW


def brute_gw_objective(cx, cy, plan):
    total = 0.0
    n, m = plan.shape
    for i in range(n):
        for j in range(m):
            for k in range(n):
                for l in range(m):
                    total += 0.5 * (cx[i, k] - cy[j, l]) ** 2 * plan[i, j] * plan[k, l]
    return total


@pytest.mark.parametrize("seed", range(3))
def test_gw_value_matches_brute_force_contraction(seed):
    rng = np.random.default_rng(seed)
    cx = ot.self_similarity(rng.normal(size=(6, 4)))
    cy = ot.self_similarity(rng.normal(size=(5, 4)))
    res = ot.entropic_gw(cx, cy)
    assert res.value == pytest.approx(brute_gw_objective(cx, cy, res.plan), abs=1e-10)


@pytest.mark.parametrize("n", [10, 30, 50])
def test_gw_self_distance_near_zero(n):
    rng = np.random.default_rng(7 * n)
    c = ot.self_similarity(rng.normal(size=(n, 8)))
    res = ot.entropic_gw(c, c)
    assert 0.0 <= res.value < 1e-3


@pytest.mark.parametrize("seed", range(4))
def test_gw_recovers_isomorphism(seed):
    rng = np.random.default_rng(seed)
    n = 7
    cx = ot.self_similarity(rng.normal(size=(n, 5)))
    perm = rng.permutation(n)
    cy = cx[np.ix_(perm, perm)]  # y-index a holds x-point perm[a]
    res = ot.entropic_gw(cx, cy)
    assert res.value < 1e-3
    recovered = np.argmax(res.plan, axis=1)
    np.testing.assert_array_equal(recovered, np.argsort(perm))


@pytest.mark.parametrize("shape", [(10, 14), (12, 12), (9, 16)])
def test_gw_symmetry(shape):
    n, m = shape
    rng = np.random.default_rng(n * 100 + m)
    cx = ot.self_similarity(rng.normal(size=(n, 6)))
    cy = ot.self_similarity(rng.normal(size=(m, 6)))
    forward = ot.entropic_gw(cx, cy).value
    backward = ot.entropic_gw(cy, cx).value
    assert abs(forward - backward) < 1e-6


@pytest.mark.parametrize("seed", range(3))
def test_gw_value_bracketed_by_reference_couplings(seed):
    # the solver is local and entropically blurred, so the best permutation
    # can undercut it; it must still clearly beat the uniform coupling it
    # starts from and stay within a small factor of the permutation optimum
    rng = np.random.default_rng(200 + seed)
    n = 6
    cx = ot.self_similarity(rng.normal(size=(n, 4)))
    cy = ot.self_similarity(rng.normal(size=(n, 4)))
    res = ot.entropic_gw(cx, cy)

    uniform = brute_gw_objective(cx, cy, np.full((n, n), 1.0 / n**2))
    perm_best = min(
        brute_gw_objective(cx, cy, np.eye(n)[list(perm)].T / n)
        for perm in itertools.permutations(range(n))
    )
    assert res.value <= uniform + 1e-9
    assert res.value <= 3.0 * perm_best


def test_gw_plan_marginals_and_nonnegativity():
    rng = np.random.default_rng(42)
    cx = ot.self_similarity(rng.normal(size=(8, 5)))
    cy = ot.self_similarity(rng.normal(size=(11, 5)))
    res = ot.entropic_gw(cx, cy)
    assert np.all(res.plan >= 0.0)
    np.testing.assert_allclose(res.plan.sum(axis=1), ot.uniform_weights(8), atol=1e-8)
    np.testing.assert_allclose(res.plan.sum(axis=0), ot.uniform_weights(11), atol=1e-8)


def test_gw_rejects_non_square_structures():
    with pytest.raises(ot.ValidationError):
        ot.entropic_gw(np.ones((3, 4)), np.eye(4))


def test_gw_underflow_at_tiny_epsilon():
    rng = np.random.default_rng(1)
    cx = ot.self_similarity(rng.normal(size=(6, 4)))
    cy = ot.self_similarity(rng.normal(size=(6, 4)))
    with pytest.raises(ot.UnderflowError):
        ot.entropic_gw(cx, cy, epsilon=1e-6)


def test_gw_distance_wrapper_on_identical_sets():
    rng = np.random.default_rng(9)
    pts = rng.normal(size=(12, 6))
    assert ot.gw_distance(pts, pts) < 1e-3
