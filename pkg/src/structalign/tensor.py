"""Dense 64-bit matrices with a reverse-mode tape.

Everything on the tape is a 2-D float64 array; vectors are columns (n, 1)
or rows (1, n) and scalars are (1, 1). There is no implicit broadcasting:
every alignment between shapes is an explicit op (`scale_rows`, `add_bias`,
`gather_rows`, ...), so a shape slip fails loudly instead of silently
fanning out.

Ops record onto the innermost active `Tape`. With no tape active they
compute plain values, which makes every routine in this package usable
as a value-only function on constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operands have incompatible or non-2-D shapes."""


class NonFiniteError(FloatingPointError):
    """An op produced NaN or infinity."""


class DomainError(ValueError):
    """Input outside an op's mathematical domain (e.g. log of <= 0)."""


_TAPE_STACK: list["Tape"] = []


def _as_array(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
    return arr


class Tensor:
    """A 2-D float64 value, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, values, requires_grad: bool = False):
        self.data = _as_array(values)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node: "Node | None" = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data[0, 0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def constant(values) -> Tensor:
    return Tensor(values, requires_grad=False)


def parameter(values) -> Tensor:
    return Tensor(values, requires_grad=True)


def scalar(x: float) -> Tensor:
    return Tensor([[float(x)]], requires_grad=False)


@dataclass
class Node:
    """One recorded op: output, parents, and the vector-Jacobian product."""

    out: Tensor
    parents: tuple[Tensor, ...]
    vjp: Callable[[np.ndarray], tuple[np.ndarray | None, ...]]
    op: str


class Tape:
    """Topologically ordered record of ops, replayed in reverse by backward().

    Nodes are appended in creation order, which is a topological order by
    construction; backward visits each node exactly once.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self

    def backward(self, loss: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
        """Accumulate d loss / d w for each w in wrt.

        Returns the gradients in order; leaves that loss does not depend on
        get zeros. Gradients also sum into each leaf's `.grad`, so callers
        must zero between optimization steps.
        """
        if loss.data.size != 1:
            raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
        for node in reversed(self.nodes):
            g_out = grads.pop(id(node.out), None)
            if g_out is None:
                continue
            parent_grads = node.vjp(g_out)
            for parent, g in zip(node.parents, parent_grads):
                if g is None or not parent.requires_grad:
                    continue
                if g.shape != parent.data.shape:
                    raise ShapeError(
                        f"vjp of {node.op} produced shape {g.shape} for parent "
                        f"of shape {parent.data.shape}"
                    )
                acc = grads.get(id(parent))
                grads[id(parent)] = g if acc is None else acc + g
        out = []
        for w in wrt:
            g = grads.get(id(w))
            if g is None and w is loss:
                g = np.ones((1, 1))
            if g is None:
                g = np.zeros_like(w.data)
            if w.grad is None:
                w.grad = g.copy()
            else:
                w.grad = w.grad + g
            out.append(g)
        return out


def _record(out_data: np.ndarray, parents: tuple[Tensor, ...], vjp, op: str) -> Tensor:
    if not np.all(np.isfinite(out_data)):
        raise NonFiniteError(f"op {op} produced a non-finite value")
    out = Tensor(out_data)
    out.requires_grad = any(p.requires_grad for p in parents)
    if _TAPE_STACK and out.requires_grad:
        node = Node(out=out, parents=parents, vjp=vjp, op=op)
        out.node = node
        _TAPE_STACK[-1].nodes.append(node)
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _record(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _record(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _record(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "div")
    ad, bd = a.data, b.data
    return _record(ad / bd, (a, b), lambda g: (g / bd, -g * ad / (bd * bd)), "div")


def add_scalar(a: Tensor, s: float) -> Tensor:
    return _record(a.data + s, (a,), lambda g: (g,), "add_scalar")


def mul_scalar(a: Tensor, s: float) -> Tensor:
    return _record(a.data * s, (a,), lambda g: (g * s,), "mul_scalar")


def neg(a: Tensor) -> Tensor:
    return mul_scalar(a, -1.0)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _record(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor, floor: float | None = None) -> Tensor:
    """Natural log. With `floor` set, inputs are clamped up to it first
    (gradient is zero in the clamped region); without it, nonpositive
    input is a DomainError."""
    if floor is None:
        if np.any(a.data <= 0.0):
            raise DomainError("log of nonpositive value without a clamp floor")
        ad = a.data
    else:
        if floor <= 0.0:
            raise DomainError("clamp floor must be positive")
        ad = np.maximum(a.data, floor)
    mask = (a.data >= ad).astype(np.float64) if floor is not None else 1.0
    return _record(np.log(ad), (a,), lambda g: (g / ad * mask,), "log")


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0.0):
        raise DomainError("sqrt of negative value")
    out = np.sqrt(a.data)
    return _record(out, (a,), lambda g: (g * 0.5 / np.maximum(out, 1e-300),), "sqrt")


def relu(a: Tensor) -> Tensor:
    mask = (a.data > 0.0).astype(np.float64)
    return _record(a.data * mask, (a,), lambda g: (g * mask,), "relu")


# ------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _record(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def transpose(a: Tensor) -> Tensor:
    return _record(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def scale_rows(a: Tensor, s: Tensor) -> Tensor:
    """Row i of the result is a[i, :] * s[i, 0]; s must be a column (n, 1)."""
    if s.shape != (a.shape[0], 1):
        raise ShapeError(f"scale_rows: scale {s.shape} for matrix {a.shape}")
    ad, sd = a.data, s.data
    return _record(
        ad * sd,
        (a, s),
        lambda g: (g * sd, np.sum(g * ad, axis=1, keepdims=True)),
        "scale_rows",
    )


def scale_cols(a: Tensor, s: Tensor) -> Tensor:
    """Column j of the result is a[:, j] * s[0, j]; s must be a row (1, m)."""
    if s.shape != (1, a.shape[1]):
        raise ShapeError(f"scale_cols: scale {s.shape} for matrix {a.shape}")
    ad, sd = a.data, s.data
    return _record(
        ad * sd,
        (a, s),
        lambda g: (g * sd, np.sum(g * ad, axis=0, keepdims=True)),
        "scale_cols",
    )


def add_bias(a: Tensor, b: Tensor) -> Tensor:
    """Add row vector b (1, m) to every row of a (n, m)."""
    if b.shape != (1, a.shape[1]):
        raise ShapeError(f"add_bias: bias {b.shape} for matrix {a.shape}")
    return _record(
        a.data + b.data,
        (a, b),
        lambda g: (g, np.sum(g, axis=0, keepdims=True)),
        "add_bias",
    )


# ------------------------------------------------------------------ reductions


def sum_all(a: Tensor) -> Tensor:
    n, m = a.shape
    return _record(
        np.array([[a.data.sum()]]),
        (a,),
        lambda g: (np.full((n, m), g[0, 0]),),
        "sum_all",
    )


def sum_rows(a: Tensor) -> Tensor:
    """(n, m) -> (n, 1), summing within each row."""
    m = a.shape[1]
    return _record(
        a.data.sum(axis=1, keepdims=True),
        (a,),
        lambda g: (np.repeat(g, m, axis=1),),
        "sum_rows",
    )


def sum_cols(a: Tensor) -> Tensor:
    """(n, m) -> (1, m), summing within each column."""
    n = a.shape[0]
    return _record(
        a.data.sum(axis=0, keepdims=True),
        (a,),
        lambda g: (np.repeat(g, n, axis=0),),
        "sum_cols",
    )


# ------------------------------------------------------------------ structure


def gather_rows(a: Tensor, indices: Sequence[int]) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("gather_rows: indices must be a flat sequence")
    if idx.size == 0:
        raise ShapeError("gather_rows: empty index list")
    if np.any(idx < 0) or np.any(idx >= a.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for {a.shape[0]} rows")
    n, m = a.shape

    def vjp(g):
        ga = np.zeros((n, m))
        np.add.at(ga, idx, g)
        return (ga,)

    return _record(a.data[idx].copy(), (a,), vjp, "gather_rows")


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_rows: no parts")
    width = parts[0].shape[1]
    for p in parts:
        if p.shape[1] != width:
            raise ShapeError("concat_rows: column counts differ")
    sizes = [p.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(g[offsets[i] : offsets[i + 1]] for i in range(len(parts)))

    return _record(
        np.concatenate([p.data for p in parts], axis=0), tuple(parts), vjp, "concat_rows"
    )


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_cols: no parts")
    height = parts[0].shape[0]
    for p in parts:
        if p.shape[0] != height:
            raise ShapeError("concat_cols: row counts differ")
    sizes = [p.shape[1] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(g[:, offsets[i] : offsets[i + 1]] for i in range(len(parts)))

    return _record(
        np.concatenate([p.data for p in parts], axis=1), tuple(parts), vjp, "concat_cols"
    )


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax with max subtraction."""
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        inner = np.sum(g * out, axis=1, keepdims=True)
        return (out * (g - inner),)

    return _record(out, (a,), vjp, "softmax_rows")


def straight_through(soft: Tensor) -> Tensor:
    """Row-wise hard one-hot of the argmax; identity on the backward pass.

    Ties break to the lowest column index. Equivalent to
    onehot(argmax(s)) + s - stopgrad(s).
    """
    return straight_through_at(soft, np.argmax(soft.data, axis=1))


def straight_through_at(soft: Tensor, cols) -> Tensor:
    """Straight-through with forced selections, one column index per row.

    Replaying recorded selections keeps the hard forward value fixed while
    the soft scores stay on the tape, which is what makes the estimator's
    gradient well defined under finite differences.
    """
    idx = np.atleast_1d(np.asarray(cols, dtype=np.int64))
    if idx.shape != (soft.shape[0],):
        raise ShapeError(f"straight_through_at: {idx.shape} picks for {soft.shape[0]} rows")
    hard = np.zeros_like(soft.data)
    hard[np.arange(soft.shape[0]), idx] = 1.0
    return _record(hard, (soft,), lambda g: (g,), "straight_through")


# ----------------------------------------------------------------- composites


def normalize_rows(a: Tensor) -> Tensor:
    """Scale each row to unit L2 norm. A zero row is a DomainError."""
    norms = np.linalg.norm(a.data, axis=1)
    if np.any(norms == 0.0):
        raise DomainError("normalize_rows: zero-norm row")
    sq = sum_rows(mul(a, a))
    inv = div(constant(np.ones((a.shape[0], 1))), sqrt(sq))
    return scale_rows(a, inv)


def mean_all(a: Tensor) -> Tensor:
    return mul_scalar(sum_all(a), 1.0 / a.data.size)


# ----------------------------------------------------------------------- Adam


@dataclass
class AdamState:
    """First/second moment accumulators for one parameter."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def for_param(cls, p: Tensor) -> "AdamState":
        return cls(m=np.zeros_like(p.data), v=np.zeros_like(p.data))


@dataclass
class AdamConfig:
    lr: float = 2e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(p: Tensor, state: AdamState, cfg: AdamConfig) -> None:
    """One bias-corrected Adam update in place, consuming p.grad."""
    if p.grad is None:
        raise ValueError("adam_step: parameter has no accumulated gradient")
    g = p.grad
    state.step += 1
    state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * g
    state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * (g * g)
    m_hat = state.m / (1.0 - cfg.beta1**state.step)
    v_hat = state.v / (1.0 - cfg.beta2**state.step)
    p.data = p.data - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    if not np.all(np.isfinite(p.data)):
        raise NonFiniteError("adam_step produced a non-finite parameter")


def zero_grads(params: Sequence[Tensor]) -> None:
    for p in params:
        p.zero_grad()
