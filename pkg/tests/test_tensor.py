"""Gradient and tape-mechanics tests for the reverse-mode core."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from structalign import tensor as T
from fdutil import check_grads

# Each case: name -> (array factory, graph builder). The builder reduces to a
# scalar through a fixed random weighting so upstream gradients are generic.


def _weighted_sum(out, rng):
    w = T.constant(rng.normal(size=out.shape))
    return T.sum_all(T.mul(out, w))


def _away_from(x, bound):
    # push magnitudes above `bound` to dodge kinks and division blowups
    return np.sign(x) * (np.abs(x) + bound)


CASES = {
    "add": (
        lambda rng: [rng.normal(size=(3, 4)), rng.normal(size=(3, 4))],
        lambda t, rng: _weighted_sum(T.add(t[0], t[1]), rng),
    ),
    "sub": (
        lambda rng: [rng.normal(size=(3, 4)), rng.normal(size=(3, 4))],
        lambda t, rng: _weighted_sum(T.sub(t[0], t[1]), rng),
    ),
    "mul": (
        lambda rng: [rng.normal(size=(3, 4)), rng.normal(size=(3, 4))],
        lambda t, rng: _weighted_sum(T.mul(t[0], t[1]), rng),
    ),
    "div": (
        lambda rng: [rng.normal(size=(3, 4)), _away_from(rng.normal(size=(3, 4)), 0.5)],
        lambda t, rng: _weighted_sum(T.div(t[0], t[1]), rng),
    ),
    "add_scalar": (
        lambda rng: [rng.normal(size=(2, 5))],
        lambda t, rng: _weighted_sum(T.add_scalar(t[0], 0.7), rng),
    ),
    "mul_scalar": (
        lambda rng: [rng.normal(size=(2, 5))],
        lambda t, rng: _weighted_sum(T.mul_scalar(t[0], -1.3), rng),
    ),
    "exp": (
        lambda rng: [rng.normal(size=(3, 3))],
        lambda t, rng: _weighted_sum(T.exp(t[0]), rng),
    ),
    "log": (
        lambda rng: [rng.uniform(0.5, 2.0, size=(3, 3))],
        lambda t, rng: _weighted_sum(T.log(t[0]), rng),
    ),
    "log_floored": (
        lambda rng: [rng.uniform(0.5, 2.0, size=(3, 3))],
        lambda t, rng: _weighted_sum(T.log(t[0], floor=1e-12), rng),
    ),
    "sqrt": (
        lambda rng: [rng.uniform(0.25, 4.0, size=(3, 3))],
        lambda t, rng: _weighted_sum(T.sqrt(t[0]), rng),
    ),
    "relu": (
        lambda rng: [_away_from(rng.normal(size=(4, 4)), 1e-3)],
        lambda t, rng: _weighted_sum(T.relu(t[0]), rng),
    ),
    "matmul": (
        lambda rng: [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))],
        lambda t, rng: _weighted_sum(T.matmul(t[0], t[1]), rng),
    ),
    "transpose": (
        lambda rng: [rng.normal(size=(3, 5))],
        lambda t, rng: _weighted_sum(T.transpose(t[0]), rng),
    ),
    "scale_rows": (
        lambda rng: [rng.normal(size=(4, 3)), rng.normal(size=(4, 1))],
        lambda t, rng: _weighted_sum(T.scale_rows(t[0], t[1]), rng),
    ),
    "scale_cols": (
        lambda rng: [rng.normal(size=(4, 3)), rng.normal(size=(1, 3))],
        lambda t, rng: _weighted_sum(T.scale_cols(t[0], t[1]), rng),
    ),
    "add_bias": (
        lambda rng: [rng.normal(size=(4, 3)), rng.normal(size=(1, 3))],
        lambda t, rng: _weighted_sum(T.add_bias(t[0], t[1]), rng),
    ),
    "sum_all": (
        lambda rng: [rng.normal(size=(3, 4))],
        lambda t, rng: T.sum_all(t[0]),
    ),
    "sum_rows": (
        lambda rng: [rng.normal(size=(3, 4))],
        lambda t, rng: _weighted_sum(T.sum_rows(t[0]), rng),
    ),
    "sum_cols": (
        lambda rng: [rng.normal(size=(3, 4))],
        lambda t, rng: _weighted_sum(T.sum_cols(t[0]), rng),
    ),
    "gather_rows": (
        lambda rng: [rng.normal(size=(5, 3))],
        lambda t, rng: _weighted_sum(T.gather_rows(t[0], [4, 0, 0, 2]), rng),
    ),
    "concat_rows": (
        lambda rng: [rng.normal(size=(2, 3)), rng.normal(size=(4, 3))],
        lambda t, rng: _weighted_sum(T.concat_rows([t[0], t[1]]), rng),
    ),
    "concat_cols": (
        lambda rng: [rng.normal(size=(3, 2)), rng.normal(size=(3, 4))],
        lambda t, rng: _weighted_sum(T.concat_cols([t[0], t[1]]), rng),
    ),
    "softmax_rows": (
        lambda rng: [rng.normal(size=(4, 5))],
        lambda t, rng: _weighted_sum(T.softmax_rows(t[0]), rng),
    ),
    "normalize_rows": (
        lambda rng: [_away_from(rng.normal(size=(4, 3)), 0.2)],
        lambda t, rng: _weighted_sum(T.normalize_rows(t[0]), rng),
    ),
    "mean_all": (
        lambda rng: [rng.normal(size=(3, 4))],
        lambda t, rng: T.mean_all(t[0]),
    ),
    "composite_chain": (
        lambda rng: [rng.normal(size=(3, 4)), rng.normal(size=(4, 3))],
        lambda t, rng: _weighted_sum(
            T.softmax_rows(T.matmul(T.relu(t[0]), _away_from_t(t[1]))), rng
        ),
    ),
}


def _away_from_t(t):
    return T.add_scalar(T.mul(t, t), 0.1)


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("name", sorted(CASES))
def test_op_matches_finite_differences(name, seed):
    factory, builder = CASES[name]
    arrays = factory(np.random.default_rng(1000 + seed))
    # fresh generator per call so the analytic pass and every
    # finite-difference probe see identical reduction weights
    check_grads(lambda ts: builder(ts, np.random.default_rng(2000 + seed)), arrays)


def test_straight_through_forward_is_row_onehot_lowest_tie():
    s = T.constant([[0.2, 0.5, 0.3], [0.4, 0.4, 0.2]])
    hard = T.straight_through(s)
    np.testing.assert_array_equal(hard.data, [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])


def test_straight_through_backward_is_identity():
    p = T.parameter([[0.2, 0.5, 0.3]])
    w = np.array([[3.0, -1.0, 2.0]])
    with T.Tape() as tape:
        loss = T.sum_all(T.mul(T.straight_through(p), T.constant(w)))
        (g,) = tape.backward(loss, [p])
    np.testing.assert_allclose(g, w)


def test_tape_nodes_topologically_ordered():
    a = T.parameter(np.eye(3))
    b = T.parameter(np.ones((3, 3)))
    with T.Tape() as tape:
        c = T.matmul(a, b)
        d = T.add(c, b)
        T.sum_all(T.mul(d, c))
    seen = set()
    for node in tape.nodes:
        for parent in node.parents:
            if parent.node is not None:
                assert id(parent.node.out) in seen
        seen.add(id(node.out))


def test_gradients_accumulate_until_zeroed():
    p = T.parameter([[2.0]])
    for expected in (4.0, 8.0):  # d(p^2)/dp = 2p = 4, summed across backwards
        with T.Tape() as tape:
            loss = T.mul(p, p)
            tape.backward(loss, [p])
        assert p.grad[0, 0] == pytest.approx(expected)
    p.zero_grad()
    with T.Tape() as tape:
        tape.backward(T.mul(p, p), [p])
    assert p.grad[0, 0] == pytest.approx(4.0)


def test_unused_leaf_gets_zero_gradient():
    p = T.parameter([[1.0, 2.0]])
    q = T.parameter([[3.0, 4.0]])
    with T.Tape() as tape:
        loss = T.sum_all(p)
        gp, gq = tape.backward(loss, [p, q])
    np.testing.assert_array_equal(gq, np.zeros((1, 2)))
    np.testing.assert_array_equal(gp, np.ones((1, 2)))


def test_reused_tensor_gradient_sums_over_uses():
    p = T.parameter([[3.0]])
    with T.Tape() as tape:
        loss = T.add(T.mul(p, p), T.mul(p, p))
        (g,) = tape.backward(loss, [p])
    assert g[0, 0] == pytest.approx(12.0)


def test_backward_requires_scalar_loss():
    p = T.parameter(np.ones((2, 2)))
    with T.Tape() as tape:
        out = T.mul(p, p)
        with pytest.raises(T.ShapeError):
            tape.backward(out, [p])


def test_shape_mismatch_raises():
    a = T.constant(np.ones((2, 3)))
    b = T.constant(np.ones((3, 2)))
    with pytest.raises(T.ShapeError):
        T.add(a, b)
    with pytest.raises(T.ShapeError):
        T.matmul(a, a)
    with pytest.raises(T.ShapeError):
        T.scale_rows(a, T.constant(np.ones((3, 1))))


def test_non_2d_rejected():
    with pytest.raises(T.ShapeError):
        T.Tensor(np.ones(3))
    with pytest.raises(T.ShapeError):
        T.Tensor(np.ones((2, 2, 2)))


def test_log_nonpositive_without_floor_raises():
    with pytest.raises(T.DomainError):
        T.log(T.constant([[1.0, 0.0]]))
    # a floor makes the same input legal
    out = T.log(T.constant([[1.0, 0.0]]), floor=1e-12)
    assert out.data[0, 1] == pytest.approx(np.log(1e-12))


def test_non_finite_forward_raises():
    with np.errstate(over="ignore", divide="ignore"):
        big = T.constant([[1e308]])
        with pytest.raises(T.NonFiniteError):
            T.exp(big)
        with pytest.raises(T.NonFiniteError):
            T.div(T.constant([[1.0]]), T.constant([[0.0]]))


def test_ops_without_tape_produce_plain_values():
    p = T.parameter([[1.0, 2.0]])
    out = T.mul(p, p)
    assert out.node is None
    np.testing.assert_array_equal(out.data, [[1.0, 4.0]])


def test_tape_replay_bit_identical():
    def run():
        rng = np.random.default_rng(7)
        x = T.parameter(rng.normal(size=(6, 4)))
        w = T.parameter(rng.normal(size=(4, 3)))
        with T.Tape() as tape:
            loss = T.sum_all(T.softmax_rows(T.matmul(T.relu(x), w)))
            grads = tape.backward(loss, [x, w])
        return loss.item(), grads

    l1, g1 = run()
    l2, g2 = run()
    assert l1 == l2
    for a, b in zip(g1, g2):
        assert np.array_equal(a, b)


@settings(max_examples=50, deadline=None)
@given(
    st.lists(
        st.lists(st.floats(-30, 30), min_size=4, max_size=4), min_size=1, max_size=6
    ),
    st.floats(-50, 50),
)
def test_softmax_rows_sum_to_one_and_shift_invariant(rows, shift):
    a = np.asarray(rows)
    out = T.softmax_rows(T.constant(a)).data
    np.testing.assert_allclose(out.sum(axis=1), np.ones(a.shape[0]), atol=1e-12)
    shifted = T.softmax_rows(T.constant(a + shift)).data
    np.testing.assert_allclose(out, shifted, atol=1e-12)
    assert np.all(out >= 0.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_normalize_rows_gives_unit_norms(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(5, 7)) + 0.1
    out = T.normalize_rows(T.constant(a)).data
    np.testing.assert_allclose(np.linalg.norm(out, axis=1), np.ones(5), atol=1e-12)


def test_adam_step_matches_hand_computation():
    # one step, worked by hand at lr=0.1, betas (0.9, 0.999), eps 1e-8:
    # m=0.05, v=2.5e-4, m_hat=0.5, v_hat=0.25, p -= 0.1*0.5/(0.5+1e-8)
    p = T.parameter([[1.0]])
    p.grad = np.array([[0.5]])
    state = T.AdamState.for_param(p)
    cfg = T.AdamConfig(lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8)
    T.adam_step(p, state, cfg)
    expected = 1.0 - 0.1 * 0.5 / (np.sqrt(0.25) + 1e-8)
    assert p.data[0, 0] == pytest.approx(expected, abs=1e-15)
    assert state.step == 1

    # second step with a new gradient, accumulators carried forward
    p.grad = np.array([[0.25]])
    T.adam_step(p, state, cfg)
    m = 0.9 * 0.05 + 0.1 * 0.25
    v = 0.999 * 2.5e-4 + 0.001 * 0.0625
    m_hat = m / (1.0 - 0.9**2)
    v_hat = v / (1.0 - 0.999**2)
    expected2 = expected - 0.1 * m_hat / (np.sqrt(v_hat) + 1e-8)
    assert p.data[0, 0] == pytest.approx(expected2, abs=1e-15)


def test_adam_without_gradient_raises():
    p = T.parameter([[1.0]])
    state = T.AdamState.for_param(p)
    with pytest.raises(ValueError):
        T.adam_step(p, state, T.AdamConfig())
