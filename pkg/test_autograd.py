"""
Reverse-mode differentiation and the Adam update
"""

import numpy as np
import pytest

from errors import ShapeError
from pinn import AdamState, adam_step, backward, constant, parameter
from pinn import autograd as ag


def numeric_grad(fn, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        up, down = x.copy(), x.copy()
        up[idx] += h
        down[idx] -= h
        grad[idx] = (fn(up) - fn(down)) / (2 * h)
    return grad


def check_gradient(build, x: np.ndarray, rtol: float = 1e-5, atol: float = 1e-7):
    """Compare backward() against central differences for a scalar function of one input."""
    p = parameter(x.copy())
    backward(build(p))
    expected = numeric_grad(lambda val: build(constant(val)).item(), x)
    np.testing.assert_allclose(p.grad, expected, rtol=rtol, atol=atol)


RNG = np.random.default_rng(0)
X = RNG.normal(size=(3, 4))
POSITIVE = RNG.uniform(0.5, 2.0, size=(3, 4))


@pytest.mark.parametrize("name, build, x", [
    ("square", lambda a: ag.total(ag.square(a)), X),
    ("sqrt", lambda a: ag.total(ag.sqrt(a)), POSITIVE),
    ("exp", lambda a: ag.mean(ag.exp(a)), X),
    ("log", lambda a: ag.total(ag.log(a)), POSITIVE),
    ("softplus", lambda a: ag.total(ag.softplus(a)), X),
    ("div", lambda a: ag.total(ag.div(1.0, a)), POSITIVE),
    ("huber", lambda a: ag.total(ag.huber(a * 3.0, 1.0)), X),
    ("row_sum", lambda a: ag.total(ag.square(ag.row_sum(a))), X),
    ("transpose", lambda a: ag.total(ag.matmul(ag.transpose(a), a)), X),
    ("reshape", lambda a: ag.total(ag.square(ag.reshape(a, 2, 6)) * np.arange(12.0).reshape(2, 6)), X),
])
def test_elementwise_gradients(name, build, x):
    check_gradient(build, x)


def test_matmul_gradient():
    w = RNG.normal(size=(4, 2))
    check_gradient(lambda a: ag.total(ag.square(a @ constant(w))), X)
    check_gradient(lambda b: ag.total(ag.square(constant(X) @ b)), w)


def test_layer_norm_gradient():
    gain = RNG.normal(size=(1, 4))
    bias = RNG.normal(size=(1, 4))
    weights = RNG.normal(size=(3, 4))
    loss = lambda a, g=gain, b=bias: ag.total(ag.layer_norm(a, g, b) * weights)
    check_gradient(loss, X)
    check_gradient(lambda g: ag.total(ag.layer_norm(X, g, bias) * weights), gain)


def test_masked_softmax_gradient_and_zeros():
    mask = np.array([[True, True, False, True], [False, True, True, False], [True, False, False, False]])
    weights = RNG.normal(size=(3, 4))
    out = ag.masked_softmax(constant(X), mask)
    assert np.allclose(out.value.sum(axis=1), 1.0)
    assert (out.value[~mask] == 0.0).all()
    check_gradient(lambda a: ag.total(ag.masked_softmax(a, mask) * weights), X)


def test_masked_softmax_needs_one_open_entry_per_row():
    with pytest.raises(ShapeError):
        ag.masked_softmax(constant(np.zeros((2, 2))), np.array([[True, False], [False, False]]))


def test_gather_and_segment_sum_gradients():
    index = np.array([2, 0, 2, 1])
    check_gradient(lambda a: ag.total(ag.square(ag.gather_rows(a, index))), X)
    ids = np.array([0, 1, 0])
    check_gradient(lambda a: ag.total(ag.square(ag.segment_sum(a, ids, 2))), X)


def test_concat_and_slice_gradients():
    other = RNG.normal(size=(3, 2))
    check_gradient(lambda a: ag.total(ag.square(ag.concat_cols([a, other]))), X)
    check_gradient(lambda a: ag.total(ag.square(ag.concat_rows([a, X]))), X)
    check_gradient(lambda a: ag.total(ag.square(ag.slice_row(a, -1))), X)


@pytest.mark.parametrize("shape", [(1, 4), (3, 1), (1, 1)])
def test_broadcast_gradients_sum_back(shape):
    small = RNG.normal(size=shape)
    check_gradient(lambda b: ag.total(ag.square(constant(X) * b + b)), small)
    check_gradient(lambda b: ag.total(ag.square(constant(X) - b)), small)
    check_gradient(lambda b: ag.total(ag.div(constant(POSITIVE), b * b + 1.0)), small)


def test_incompatible_shapes_raise():
    with pytest.raises(ShapeError):
        ag.add(constant(np.zeros((3, 4))), constant(np.zeros((2, 4))))
    with pytest.raises(ShapeError):
        ag.matmul(constant(np.zeros((3, 4))), constant(np.zeros((3, 4))))
    with pytest.raises(ShapeError):
        backward(parameter(np.zeros((2, 2))))


def test_backward_twice_accumulates_into_leaves():
    p = parameter(np.array([[1.0, 2.0]]))
    loss = ag.total(ag.square(p))
    backward(loss)
    backward(loss)
    assert p.grad.tolist() == [[4.0, 8.0]]
    p.zero_grad()
    backward(loss)
    assert p.grad.tolist() == [[2.0, 4.0]]


def test_constants_get_no_gradient():
    c = constant(np.ones((2, 2)))
    p = parameter(np.ones((2, 2)))
    backward(ag.total(c * p))
    assert not c.grad.any()
    assert p.grad.tolist() == [[1.0, 1.0], [1.0, 1.0]]


def test_adam_first_step_moves_by_learning_rate():
    p = parameter(np.array([[1.0, -1.0]]))
    p.grad = np.array([[0.5, -2.0]])
    state = AdamState(learning_rate=0.1)
    adam_step({"w": p}, state)
    assert state.step == 1
    np.testing.assert_allclose(p.value, [[0.9, -0.9]], rtol=1e-6)


def test_adam_minimizes_a_quadratic():
    p = parameter(np.array([[3.0, -2.0]]))
    state = AdamState(learning_rate=0.1)
    for _ in range(300):
        p.zero_grad()
        backward(ag.total(ag.square(p - 1.0)))
        adam_step({"w": p}, state)
    np.testing.assert_allclose(p.value, [[1.0, 1.0]], atol=5e-2)


def test_adam_rejects_mismatched_gradient():
    p = parameter(np.zeros((2, 2)))
    with pytest.raises(ShapeError):
        adam_step({"w": p}, AdamState(), grads={"w": np.zeros((1, 2))})
