import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nrelaggs.errors import BadSegmentIndex, LabelDomain, ShapeMismatch
from nrelaggs.neural import (
    AGGREGATES,
    AdamState,
    DenseLayer,
    SegmentIndex,
    adam_step,
    dense_backward,
    dense_forward,
    glorot_dense,
    hinge_loss,
    identity_dense,
    segment_aggregate,
    segment_aggregate_backward,
)

H = 1e-4
PRIMITIVE_TOL = 1e-4


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b)))


def numeric_grad(f, x):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + H
        up = f()
        x[i] = old - H
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * H)
    return g


# --------------------------------------------------------------------------- dense


def test_dense_examples():
    X = np.array([[3.0, 5.0], [-1.0, 2.0]])
    np.testing.assert_array_equal(dense_forward(identity_dense(2, np.float64), X), X)
    diff = DenseLayer(np.array([[1.0], [-1.0]]), np.zeros(1))
    np.testing.assert_array_equal(dense_forward(diff, np.array([[3.0, 5.0]])), [[-2.0]])
    relu = DenseLayer(np.eye(2), np.zeros(2), "relu")
    np.testing.assert_array_equal(dense_forward(relu, np.array([[-1.0, 2.0]])), [[0.0, 2.0]])
    with pytest.raises(ShapeMismatch):
        dense_forward(diff, np.ones((1, 3)))


def test_glorot_bounds_and_determinism():
    a = glorot_dense(np.random.default_rng(3), 6, 4)
    b = glorot_dense(np.random.default_rng(3), 6, 4)
    np.testing.assert_array_equal(a.weights, b.weights)
    assert np.all(np.abs(a.weights) <= np.sqrt(6 / 10)) and not a.bias.any()
    assert a.weights.dtype == np.float32


@pytest.mark.parametrize("activation", ["linear", "relu"])
@given(seed=st.integers(0, 10_000), m=st.integers(1, 7), n_in=st.integers(1, 4), n_out=st.integers(1, 4))
@settings(max_examples=25, deadline=None)
def test_dense_gradient(activation, seed, m, n_in, n_out):
    rng = np.random.default_rng(seed)
    layer = glorot_dense(rng, n_in, n_out, activation, np.float64)
    X = rng.normal(size=(m, n_in))
    G = rng.normal(size=(m, n_out))
    out = dense_forward(layer, X)
    if activation == "relu" and np.any(np.abs(X @ layer.weights + layer.bias) < 10 * H):
        return  # kink too close for a central difference
    gX, gW, gb = dense_backward(layer, X, out, G)
    f = lambda: float((dense_forward(layer, X) * G).sum())
    assert rel_err(gX, numeric_grad(f, X)) < PRIMITIVE_TOL
    assert rel_err(gW, numeric_grad(f, layer.weights)) < PRIMITIVE_TOL
    assert rel_err(gb, numeric_grad(f, layer.bias)) < PRIMITIVE_TOL


# --------------------------------------------------------------------------- segments


def test_segment_examples():
    X = np.array([[1.0], [2.0], [3.0]])
    seg = SegmentIndex(np.array([0, 0, 1]), 2)
    np.testing.assert_array_equal(segment_aggregate(X, seg, "sum"), [[3], [3]])
    np.testing.assert_array_equal(segment_aggregate(X, seg, "mean"), [[1.5], [3]])
    empty_first = SegmentIndex(np.array([1, 1, 1]), 2)
    np.testing.assert_array_equal(segment_aggregate(X, empty_first, "max"), [[0], [3]])
    for kind in AGGREGATES:
        assert segment_aggregate(X, empty_first, kind)[0, 0] == 0


def test_segment_backward_examples():
    X = np.array([[1.0], [2.0], [3.0]])
    seg = SegmentIndex(np.array([0, 0, 1]), 2)
    G = np.array([[1.0], [1.0]])
    np.testing.assert_array_equal(segment_aggregate_backward(G, X, seg, "sum"), [[1], [1], [1]])
    np.testing.assert_array_equal(segment_aggregate_backward(G, X, seg, "mean"), [[0.5], [0.5], [1]])
    tied = np.array([[2.0], [2.0], [5.0]])
    np.testing.assert_array_equal(segment_aggregate_backward(G, tied, seg, "max"), [[1], [0], [1]])
    with pytest.raises(ShapeMismatch):
        segment_aggregate_backward(np.ones((3, 1)), X, seg, "sum")


def test_empty_segment_propagates_nothing():
    X = np.array([[4.0, -1.0], [2.0, 3.0]])
    seg = SegmentIndex(np.array([1, 1]), 3)
    G = np.arange(6, dtype=float).reshape(3, 2)
    for kind in AGGREGATES:
        g = segment_aggregate_backward(G, X, seg, kind)
        # only segment 1's gradient reaches the rows; sum copies it to both
        assert g.sum() == pytest.approx(G[1].sum() * (2 if kind == "sum" else 1))


@pytest.mark.parametrize(
    "ids, n",
    [([1, 0], 2), ([0, 2], 2), ([-1, 0], 2), ([[0]], 1)],
)
def test_bad_segment_index(ids, n):
    with pytest.raises(BadSegmentIndex):
        SegmentIndex(np.array(ids), n)


def test_segment_row_mismatch():
    with pytest.raises(BadSegmentIndex):
        segment_aggregate(np.ones((2, 1)), SegmentIndex(np.array([0, 0, 0]), 1), "sum")


segments = st.integers(1, 3).flatmap(
    lambda n: st.tuples(st.just(n), st.lists(st.integers(0, n - 1), min_size=0, max_size=7).map(sorted))
)


@pytest.mark.parametrize("kind", AGGREGATES)
@given(seed=st.integers(0, 10_000), seg_spec=segments, width=st.integers(1, 4))
@settings(max_examples=40, deadline=None)
def test_segment_gradient(kind, seed, seg_spec, width):
    n, ids = seg_spec
    rng = np.random.default_rng(seed)
    seg = SegmentIndex(np.array(ids, dtype=np.int64), n)
    # distinct, well-separated values keep min/max tie-free under perturbation
    X = rng.permutation(len(ids) * width).reshape(len(ids), width).astype(np.float64) * 0.1 + rng.normal(size=(len(ids), width)) * 1e-3
    G = rng.normal(size=(n, width))
    analytic = segment_aggregate_backward(G, X, seg, kind)
    f = lambda: float((segment_aggregate(X, seg, kind) * G).sum())
    assert rel_err(analytic, numeric_grad(f, X)) < PRIMITIVE_TOL if X.size else True


@given(seed=st.integers(0, 10_000), seg_spec=segments, width=st.integers(1, 4))
@settings(max_examples=40, deadline=None)
def test_segment_permutation_and_mean_identity(seed, seg_spec, width):
    n, ids = seg_spec
    rng = np.random.default_rng(seed)
    ids = np.array(ids, dtype=np.int64)
    seg = SegmentIndex(ids, n)
    X = rng.normal(size=(len(ids), width))
    perm = np.arange(len(ids))
    for s in range(n):
        members = np.flatnonzero(ids == s)
        perm[members] = rng.permutation(members)
    for kind in AGGREGATES:
        np.testing.assert_allclose(segment_aggregate(X[perm], seg, kind), segment_aggregate(X, seg, kind), atol=1e-12)
    nonempty = seg.counts > 0
    np.testing.assert_allclose(
        segment_aggregate(X, seg, "mean")[nonempty],
        segment_aggregate(X, seg, "sum")[nonempty] / seg.counts[nonempty, None],
    )


def test_segment_dtype_preserved():
    X = np.ones((3, 2), dtype=np.float32)
    seg = SegmentIndex(np.array([0, 0, 1]), 2)
    for kind in AGGREGATES:
        assert segment_aggregate(X, seg, kind).dtype == np.float32


# --------------------------------------------------------------------------- hinge


def test_hinge_examples():
    assert hinge_loss(np.array([2.0]), np.array([1])) == (0.0, pytest.approx(np.array([0.0])))
    loss, grad = hinge_loss(np.array([0.0]), np.array([1]))
    assert loss == 1.0 and grad.tolist() == [-1.0]
    loss, grad = hinge_loss(np.array([0.5, 0.5]), np.array([1, -1]))
    assert loss == 1.0 and grad.tolist() == [-0.5, 0.5]
    # exactly on the margin: no gradient
    assert hinge_loss(np.array([1.0]), np.array([1]))[1].tolist() == [0.0]
    with pytest.raises(LabelDomain):
        hinge_loss(np.array([0.0]), np.array([0]))
    with pytest.raises(ShapeMismatch):
        hinge_loss(np.zeros(2), np.ones(3))


@given(seed=st.integers(0, 10_000), n=st.integers(1, 6))
@settings(max_examples=30, deadline=None)
def test_hinge_gradient(seed, n):
    rng = np.random.default_rng(seed)
    s = rng.normal(size=n) * 2
    y = rng.choice([-1, 1], size=n)
    if np.any(np.abs(1 - y * s) < 10 * H):
        return
    _, g = hinge_loss(s, y)
    assert rel_err(g, numeric_grad(lambda: hinge_loss(s, y)[0], s)) < PRIMITIVE_TOL


# --------------------------------------------------------------------------- adam


def test_adam_zero_gradient_is_noop():
    p = [np.array([1.0, -2.0])]
    state = AdamState.for_params(p)
    for _ in range(5):
        adam_step(state, p, [np.zeros(2)])
    assert p[0].tolist() == [1.0, -2.0] and state.step == 5


def test_adam_first_step():
    p = [np.array([0.5])]
    state = AdamState.for_params(p, learning_rate=0.001)
    adam_step(state, p, [np.array([1.0])])
    # m_hat = 1, v_hat = 1 -> delta = -lr * 1 / (1 + eps)
    assert p[0][0] - 0.5 == pytest.approx(-0.001 / (1 + 1e-8), rel=1e-12)
    with pytest.raises(ShapeMismatch):
        adam_step(state, p, [np.ones(2)])


def test_adam_decreases_quadratic():
    x = [np.array([3.0])]
    state = AdamState.for_params(x, learning_rate=0.1)
    losses = [float(x[0][0] ** 2)]
    for _ in range(2):
        adam_step(state, x, [2 * x[0]])
        losses.append(float(x[0][0] ** 2))
    assert losses[0] > losses[1] > losses[2]


def test_hinge_propagates_nan():
    loss, _ = hinge_loss(np.array([np.nan, 1.0]), np.array([1, 1]))
    assert np.isnan(loss)


def test_extremum_backward_with_nan_does_not_crash():
    X = np.array([[np.nan], [1.0]])
    seg = SegmentIndex(np.array([0, 0]), 1)
    g = segment_aggregate_backward(np.ones((1, 1)), X, seg, "max")
    assert g.shape == (2, 1)
