import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from dyted import autodiff as ad

TOL = 1e-4


def _rng(seed=0):
    return np.random.default_rng(seed)


def test_square_gradient():
    x = ad.parameter(3.0)
    g = ad.backward(ad.mul(x, x))
    assert g[x] == pytest.approx(6.0)


def test_log_sigmoid_gradient_at_zero():
    x = ad.parameter(0.0)
    assert ad.backward(ad.log(ad.sigmoid(x)))[x] == pytest.approx(0.5)
    y = ad.parameter(0.0)
    assert ad.backward(ad.log_sigmoid(y))[y] == pytest.approx(0.5)


def test_matmul_sum_gradient_is_broadcast_row_sums():
    rng = _rng(1)
    A = ad.parameter(rng.normal(size=(3, 4)))
    B = rng.normal(size=(4, 5))
    g = ad.backward(ad.sum(ad.matmul(A, ad.constant(B))))[A]
    np.testing.assert_allclose(g, np.tile(B.sum(axis=1), (3, 1)))


def test_elementwise_product_sum_gradient():
    rng = _rng(2)
    A = ad.parameter(rng.normal(size=(3, 4)))
    B = rng.normal(size=(3, 4))
    np.testing.assert_allclose(ad.backward(ad.sum(ad.mul(A, B)))[A], B)


def test_constant_function_error_zero():
    assert ad.grad_check(lambda x: ad.constant(2.5), np.ones(4)) == 0.0


def test_shared_subexpression_accumulates():
    x = ad.parameter(2.0)
    y = ad.mul(x, x)
    z = ad.add(y, ad.mul(y, 3.0))  # 4 x^2
    assert ad.backward(z)[x] == pytest.approx(16.0)


def test_backward_twice_identical():
    rng = _rng(3)
    W = ad.parameter(rng.normal(size=(4, 3)))
    loss = ad.sum(ad.tanh(ad.matmul(ad.constant(rng.normal(size=(5, 4))), W)))
    g1, g2 = ad.backward(loss), ad.backward(loss)
    assert set(g1) == set(g2)
    for k in g1:
        np.testing.assert_array_equal(g1[k], g2[k])


def test_untracked_constants_get_no_gradient():
    c = ad.constant(np.ones(3))
    x = ad.parameter(np.ones(3))
    g = ad.backward(ad.sum(ad.mul(x, c)))
    assert x in g and c not in g
    np.testing.assert_array_equal(g.for_tensor(c), np.zeros(3))


def test_non_scalar_loss_rejected():
    with pytest.raises(ValueError):
        ad.backward(ad.parameter(np.ones(3)))


def test_shape_errors():
    with pytest.raises(ad.ShapeError):
        ad.add(ad.tensor(np.ones(3)), ad.tensor(np.ones(4)))
    with pytest.raises(ad.ShapeError):
        ad.matmul(ad.tensor(np.ones((2, 3))), ad.tensor(np.ones((2, 3))))
    with pytest.raises(ad.ShapeError):
        ad.bias_add(ad.tensor(np.ones((2, 3))), ad.tensor(np.ones(2)))


def test_gradients_match_tensor_shapes():
    rng = _rng(4)
    W = ad.parameter(rng.normal(size=(3, 2)))
    b = ad.parameter(rng.normal(size=2))
    x = ad.constant(rng.normal(size=(5, 3)))
    g = ad.backward(ad.mean(ad.sigmoid(ad.bias_add(ad.matmul(x, W), b))))
    assert g[W].shape == W.shape and g[b].shape == b.shape


def test_format_graph_lists_ops():
    x = ad.parameter(np.ones(2))
    text = ad.format_graph(ad.sum(ad.exp(x)))
    assert "sum" in text and "exp" in text and "leaf" in text


def test_operator_sugar():
    x = ad.parameter(np.array([1.0, 2.0]))
    y = ((x + x) * 3.0 - x) / 2.0
    np.testing.assert_allclose(y.data, [2.5, 5.0])
    np.testing.assert_allclose(ad.backward(ad.sum(-y))[x], [-2.5, -2.5])


# ---------------------------------------------------------------------------
# every primitive passes grad_check on random inputs
# ---------------------------------------------------------------------------

dims = st.integers(1, 8)


def _unit(seed, shape, lo=-2.0, hi=2.0):
    return np.random.default_rng(seed).uniform(lo, hi, size=shape)


def _weights(seed, shape):
    # a random linear read-out keeps the check sensitive to every output entry
    return ad.constant(np.random.default_rng(seed + 10_000).normal(size=shape))


def _readout(y, seed):
    return ad.sum(ad.mul(y, _weights(seed, y.shape)))


UNARY = {
    "sigmoid": (ad.sigmoid, (-4, 4)),
    "tanh": (ad.tanh, (-3, 3)),
    "exp": (ad.exp, (-2, 2)),
    "log": (ad.log, (0.2, 3)),
    "log_sigmoid": (ad.log_sigmoid, (-6, 6)),
    "scale": (lambda x: ad.scale(x, -1.7), (-2, 2)),
    "neg": (lambda x: -x, (-2, 2)),
    "softmax": (ad.softmax, (-3, 3)),
    "l2_norm": (ad.l2_norm, (0.3, 2)),
    "sum_axis": (lambda x: ad.sum(x, axis=-1), (-2, 2)),
    "mean_axis": (lambda x: ad.mean(x, axis=0), (-2, 2)),
    "reshape": (lambda x: ad.reshape(x, (-1,)), (-2, 2)),
    "take_rows": (lambda x: ad.take(x, np.array([0, 0, x.shape[0] - 1])), (-2, 2)),
    "transpose_slice": (lambda x: ad.take(x, (slice(None), slice(None, None, -1))), (-2, 2)),
}


@pytest.mark.parametrize("name", sorted(UNARY))
@given(n=dims, k=dims, seed=st.integers(0, 10 ** 6))
@settings(max_examples=12, deadline=None)
def test_unary_primitive_grad_check(name, n, k, seed):
    fn, (lo, hi) = UNARY[name]
    x = _unit(seed, (n, k), lo, hi)
    assert ad.grad_check(lambda t: _readout(fn(t), seed), x) < TOL


def test_clip_grad_check_away_from_kinks():
    x = np.array([[-2.0, -0.3, 0.1, 0.45, 1.7]])
    assert ad.grad_check(lambda t: _readout(ad.clip(t, -0.5, 0.5), 1), x) < TOL
    p = ad.parameter(x)
    np.testing.assert_array_equal(ad.backward(ad.sum(ad.clip(p, -0.5, 0.5)))[p], [[0, 1, 1, 1, 0]])


BINARY = {
    "add": lambda a, b: ad.add(a, b),
    "sub": lambda a, b: ad.sub(a, b),
    "mul": lambda a, b: ad.mul(a, b),
    "rowwise_dot": lambda a, b: ad.rowwise_dot(a, b),
    "cosine_similarity": lambda a, b: ad.cosine_similarity(a, b),
    "concat": lambda a, b: ad.concat([a, b]),
    "concat_rows": lambda a, b: ad.concat([a, b], axis=0),
}


@pytest.mark.parametrize("name", sorted(BINARY))
@pytest.mark.parametrize("wrt", [0, 1])
@given(n=dims, k=dims, seed=st.integers(0, 10 ** 6))
@settings(max_examples=12, deadline=None)
def test_binary_primitive_grad_check(name, wrt, n, k, seed):
    fn = BINARY[name]
    a, b = _unit(seed, (n, k)), _unit(seed + 1, (n, k))
    if wrt == 0:
        f = lambda t: _readout(fn(t, ad.constant(b)), seed)  # noqa: E731
        x = a
    else:
        f = lambda t: _readout(fn(ad.constant(a), t), seed)  # noqa: E731
        x = b
    assert ad.grad_check(f, x) < TOL


@given(n=dims, k=dims, m=dims, seed=st.integers(0, 10 ** 6))
@settings(max_examples=20, deadline=None)
def test_matmul_and_bias_grad_check(n, k, m, seed):
    A, B, c = _unit(seed, (n, k)), _unit(seed + 1, (k, m)), _unit(seed + 2, (m,))
    assert ad.grad_check(lambda t: _readout(ad.matmul(t, ad.constant(B)), seed), A) < TOL
    assert ad.grad_check(lambda t: _readout(ad.matmul(ad.constant(A), t), seed), B) < TOL
    X = ad.constant(A @ B)
    assert ad.grad_check(lambda t: _readout(ad.bias_add(X, t), seed), c) < TOL
    assert ad.grad_check(lambda t: _readout(ad.bias_add(t, ad.constant(c)), seed), A @ B) < TOL


@given(n=dims, k=dims, seed=st.integers(0, 10 ** 6))
@settings(max_examples=20, deadline=None)
def test_spmm_grad_check(n, k, seed):
    rng = np.random.default_rng(seed)
    S = sp.random(n, n, density=0.5, random_state=rng, format="csr")
    x = _unit(seed, (n, k))
    assert ad.grad_check(lambda t: _readout(ad.spmm(S, t), seed), x) < TOL


@given(seed=st.integers(0, 10 ** 6))
@settings(max_examples=20, deadline=None)
def test_scalar_broadcast_grad_check(seed):
    a = _unit(seed, (3, 4))
    s = np.array(0.7)
    assert ad.grad_check(lambda t: _readout(ad.mul(ad.constant(a), t), seed), s) < TOL
    assert ad.grad_check(lambda t: _readout(ad.sub(t, ad.constant(a)), seed), s) < TOL


def test_whole_reduction_grad_check():
    x = _unit(5, (4, 3))
    assert ad.grad_check(lambda t: ad.sum(ad.exp(t)), x) < TOL
    assert ad.grad_check(lambda t: ad.mean(ad.tanh(t)), x) < TOL


def test_cosine_similarity_zero_vector_is_finite():
    a = ad.parameter(np.zeros((1, 3)))
    b = ad.constant(np.ones((1, 3)))
    out = ad.cosine_similarity(a, b)
    assert np.isfinite(out.data).all()
    assert np.isfinite(ad.backward(ad.sum(out))[a]).all()


def test_stable_sigmoid_extremes():
    x = ad.tensor(np.array([-800.0, 0.0, 800.0]))
    np.testing.assert_allclose(ad.sigmoid(x).data, [0.0, 0.5, 1.0])
    assert np.isfinite(ad.log_sigmoid(x).data).all()
