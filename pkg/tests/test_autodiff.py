"""Reverse-mode engine: op semantics, gradients, error taxonomy."""

import numpy as np
import pytest

from gapcast.autodiff import (
    AutodiffError,
    NonFiniteError,
    ShapeError,
    Tensor,
    add,
    backward,
    broadcast,
    concat,
    const,
    div,
    exp,
    gradcheck,
    lgamma,
    log,
    logsumexp,
    matmul,
    mean,
    mul,
    neg,
    reshape,
    sigmoid,
    slice_last,
    softplus,
    square,
    sub,
    tanh,
    tensor_sum,
)


def test_add_componentwise():
    out = add(Tensor(np.array([1.0, 2.0])), Tensor(np.array([3.0, 4.0])))
    np.testing.assert_array_equal(out.data, [4.0, 6.0])


def test_matmul_identity():
    x = np.array([[1.5, -2.0], [0.25, 3.0]])
    out = matmul(Tensor(np.eye(2)), Tensor(x))
    np.testing.assert_allclose(out.data, x, rtol=0, atol=0)


def test_softplus_at_zero():
    out = softplus(Tensor(np.array([0.0])))
    assert abs(out.data[0] - np.log(2.0)) < 1e-9


def test_backward_square():
    x = Tensor(np.array(3.0))
    grads = backward(square(x), wrt=[x])
    assert grads[x] == pytest.approx(6.0)


def test_backward_product_rule():
    x = Tensor(np.array(2.0))
    y = Tensor(np.array(5.0))
    grads = backward(mul(x, y), wrt=[x, y])
    assert grads[x] == pytest.approx(5.0)
    assert grads[y] == pytest.approx(2.0)


def test_backward_log_sigmoid_at_zero():
    x = Tensor(np.array(0.0))
    grads = backward(log(sigmoid(x)), wrt=[x])
    assert grads[x] == pytest.approx(0.5, abs=1e-9)


def _scalarize(t):
    return tensor_sum(t)


_POSITIVE = {"log", "lgamma"}

_UNARY_OPS = {
    "neg": neg,
    "exp": exp,
    "log": log,
    "tanh": tanh,
    "square": square,
    "sigmoid": sigmoid,
    "softplus": softplus,
    "lgamma": lgamma,
}

_BINARY_OPS = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
}


@pytest.mark.parametrize("name", sorted(_UNARY_OPS))
def test_unary_gradients_match_finite_differences(name):
    rng = np.random.default_rng(hash(name) % 2**32)
    data = rng.uniform(-2.0, 2.0, size=(3, 4))
    if name in _POSITIVE:
        data = np.abs(data) + 0.2
    t = Tensor(data)
    gradcheck(lambda a: _scalarize(_UNARY_OPS[name](a)), [t], step=1e-5, rtol=1e-4, atol=1e-6)


@pytest.mark.parametrize("name", sorted(_BINARY_OPS))
def test_binary_gradients_match_finite_differences(name):
    rng = np.random.default_rng(hash(name) % 2**32)
    a = Tensor(rng.uniform(-2.0, 2.0, size=(3, 4)))
    b_data = rng.uniform(-2.0, 2.0, size=(3, 4))
    if name == "div":
        b_data = np.sign(b_data) * (np.abs(b_data) + 0.5)
    b = Tensor(b_data)
    gradcheck(lambda x, y: _scalarize(_BINARY_OPS[name](x, y)), [a, b], step=1e-5, rtol=1e-4, atol=1e-6)


@pytest.mark.parametrize(
    "build",
    [
        lambda a, b: matmul(a, b),
        lambda a, b: tensor_sum(mul(a, a), axis=-1),
        lambda a, b: mean(add(a, a), axis=0),
        lambda a, b: logsumexp(matmul(a, b), axis=-1),
        lambda a, b: slice_last(a, 1, 3),
        lambda a, b: concat([a, a], axis=-1),
        lambda a, b: reshape(a, (4, 3)),
        lambda a, b: broadcast(tensor_sum(a, axis=0, keepdims=True), (3, 4)),
    ],
    ids=["matmul", "sum_axis", "mean_axis", "logsumexp", "slice_last", "concat", "reshape", "broadcast"],
)
def test_structural_gradients_match_finite_differences(build):
    rng = np.random.default_rng(11)
    a = Tensor(rng.uniform(-2.0, 2.0, size=(3, 4)))
    b = Tensor(rng.uniform(-2.0, 2.0, size=(4, 3)))
    gradcheck(lambda x, y: _scalarize(build(x, y)), [a, b], step=1e-5, rtol=1e-4, atol=1e-6)


def test_broadcasting_add_gradients():
    rng = np.random.default_rng(12)
    a = Tensor(rng.uniform(-2.0, 2.0, size=(3, 4)))
    row = Tensor(rng.uniform(-2.0, 2.0, size=(4,)))
    gradcheck(lambda x, y: _scalarize(add(x, y)), [a, row], step=1e-5, rtol=1e-4, atol=1e-6)


def test_adjoint_linearity():
    x = Tensor(np.array([1.0, -0.5, 2.0]))
    f1 = tensor_sum(square(x))
    f2 = tensor_sum(exp(x))
    g1 = backward(f1, wrt=[x])[x]
    g2 = backward(f2, wrt=[x])[x]
    both = backward(add(tensor_sum(square(x)), tensor_sum(exp(x))), wrt=[x])[x]
    np.testing.assert_allclose(both, g1 + g2, rtol=1e-12)


def test_backward_is_pure():
    x = Tensor(np.array([0.3, 0.7]))
    out = tensor_sum(mul(x, sigmoid(x)))
    first = backward(out, wrt=[x])[x].copy()
    second = backward(out, wrt=[x])[x]
    np.testing.assert_array_equal(first, second)


def test_backward_requires_scalar_output():
    x = Tensor(np.array([1.0, 2.0]))
    with pytest.raises(AutodiffError):
        backward(exp(x), wrt=[x])


def test_unreachable_leaf_gets_zero_adjoint():
    x = Tensor(np.array(1.0))
    unused = Tensor(np.array([5.0, 6.0]))
    grads = backward(square(x), wrt=[x, unused])
    np.testing.assert_array_equal(grads[unused], np.zeros(2))


def test_shape_mismatch_raises_shape_error():
    with pytest.raises(ShapeError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_non_finite_output_raises():
    with np.errstate(invalid="ignore"), pytest.raises(NonFiniteError):
        log(Tensor(np.array([-1.0])))


def test_error_hierarchy():
    assert issubclass(ShapeError, AutodiffError)
    assert issubclass(NonFiniteError, AutodiffError)
    assert issubclass(AutodiffError, Exception)


def test_const_is_detached_from_gradients():
    x = Tensor(np.array(2.0))
    c = const(np.array(3.0))
    grads = backward(mul(x, c), wrt=[x])
    assert grads[x] == pytest.approx(3.0)


def test_gradcheck_reports_worst_relative_error():
    x = Tensor(np.array([0.4, -1.2]))
    worst = gradcheck(lambda t: tensor_sum(exp(t)), [x])
    assert 0.0 <= worst < 1e-4


def test_gradcheck_raises_beyond_tolerance():
    x = Tensor(np.array([0.5]))
    with pytest.raises(AssertionError):
        # a giant step makes the central difference of exp disagree with
        # the analytic slope far beyond the tolerance band
        gradcheck(lambda t: tensor_sum(exp(t)), [x], step=2.0, rtol=1e-6, atol=1e-9)


def test_lgamma_matches_known_values():
    vals = lgamma(Tensor(np.array([1.0, 2.0, 0.5, 6.5])))
    from scipy.special import gammaln

    np.testing.assert_allclose(vals.data, gammaln([1.0, 2.0, 0.5, 6.5]), rtol=1e-10, atol=1e-12)
