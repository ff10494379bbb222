"""Finite-difference verification of every differentiable layer type.

All checks run in float64; the gradient checker compares reverse-mode
gradients to central differences at eps = 1e-5.
"""

import numpy as np
import pytest

from banglat2i.encoders import EncoderConfig, LstmCell
from banglat2i.errors import NumericsError
from banglat2i.gan import BatchNorm2d
from banglat2i.numerics import RngStream, Tensor, grad_check
from banglat2i.numerics import tensor as ops

RNG = RngStream(202, "gradcheck")


def randt(shape, scale=1.0):
    return Tensor(RNG.normal(shape) * scale, requires_grad=True)


def test_linear_function_exact():
    x = randt((6,))
    report = grad_check(lambda: ops.tsum(x), [("x", x)])
    assert report.passed and report.max_rel_err < 1e-10


def test_quadratic_function():
    x = randt((6,))
    report = grad_check(lambda: ops.tsum(ops.square(x)), [("x", x)])
    assert report.passed and report.max_rel_err < 1e-8


def test_two_layer_network():
    x = Tensor(RNG.normal((3, 4)))
    w1, b1 = randt((4, 5), 0.5), randt((5,), 0.1)
    w2, b2 = randt((5, 2), 0.5), randt((2,), 0.1)

    def f():
        h = ops.tanh(ops.affine(x, w1, b1))
        return ops.tsum(ops.square(ops.affine(h, w2, b2)))

    report = grad_check(f, [("w1", w1), ("b1", b1), ("w2", w2), ("b2", b2)])
    assert report.passed, report


def test_eps_outside_contract_rejected():
    x = randt((3,))
    with pytest.raises(ValueError):
        grad_check(lambda: ops.tsum(x), [("x", x)], eps=1e-2)


def test_non_finite_probe_raises():
    x = Tensor(np.array([700.0]), requires_grad=True)
    with pytest.raises(NumericsError):
        grad_check(lambda: ops.texp(ops.square(x)), [("x", x)])


def test_worst_parameter_tie_breaks_by_order():
    a = Tensor(np.zeros(2), requires_grad=True)
    b = Tensor(np.zeros(2), requires_grad=True)
    report = grad_check(lambda: ops.tsum(a) + ops.tsum(b), [("first", a), ("second", b)])
    assert report.worst_parameter == "first"


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (2, 0), (3, 0)])
def test_convolution(stride, pad):
    x = randt((2, 3, 6, 6), 0.5)
    w = randt((4, 3, 3, 3), 0.4)
    b = randt((4,), 0.1)
    f = lambda: ops.tsum(ops.tanh(ops.conv2d(x, w, b, stride=stride, pad=pad)))
    report = grad_check(f, [("x", x), ("w", w), ("b", b)])
    assert report.passed, (stride, pad, report)


def test_recurrent_cell():
    cell = LstmCell(3, 4, RngStream(7, "cell"), np.float64)
    x = Tensor(RNG.normal((2, 3)))
    h = Tensor(RNG.normal((2, 4)) * 0.3)
    c = Tensor(RNG.normal((2, 4)) * 0.3)

    def f():
        h2, c2 = cell.step(x, h, c)
        return ops.tsum(ops.square(h2)) + ops.tsum(ops.square(c2))

    report = grad_check(f, cell.named_parameters())
    assert report.passed, report


@pytest.mark.parametrize("fn", [ops.relu, ops.tanh, ops.sigmoid,
                                lambda t: ops.leaky_relu(t, 0.2), ops.texp])
def test_nonlinearities(fn):
    x = Tensor(RNG.normal((3, 5)) * 0.8 + 0.05, requires_grad=True)
    report = grad_check(lambda: ops.tsum(ops.square(fn(x))), [("x", x)])
    assert report.passed, report


def test_softmax_layer():
    x = randt((3, 6))
    weights = Tensor(RNG.normal((3, 6)))
    f = lambda: ops.tsum(ops.mul(ops.softmax(x, axis=1), weights))
    report = grad_check(f, [("x", x)])
    assert report.passed, report


def test_cosine_similarity_layer():
    a = randt((4, 7))
    b = randt((4, 7))
    f = lambda: ops.tsum(ops.cosine_similarity(a, b, axis=1))
    report = grad_check(f, [("a", a), ("b", b)])
    assert report.passed, report


def test_batch_statistics_layer():
    bn = BatchNorm2d(3, np.float64)
    x = randt((4, 3, 2, 2))
    weights = Tensor(RNG.normal((4, 3, 2, 2)))

    def f():
        bn.running_mean.data[:] = 0  # keep the buffer update out of the probe
        bn.running_var.data[:] = 1
        return ops.tsum(ops.mul(bn.forward(x), weights))

    report = grad_check(f, [("x", x)] + bn.named_parameters())
    assert report.passed, report


def test_embedding_and_pooling_layers():
    table = randt((6, 3), 0.5)
    ids = np.array([[0, 2, 5], [1, 1, 4]])
    f = lambda: ops.tsum(ops.square(ops.embedding(table, ids)))
    assert grad_check(f, [("table", table)]).passed

    x = randt((2, 3, 4, 4))
    assert grad_check(lambda: ops.tsum(ops.square(ops.upsample_nearest2x(x))), [("x", x)]).passed
    assert grad_check(lambda: ops.tsum(ops.square(ops.global_avg_pool(x))), [("x", x)]).passed
    assert grad_check(lambda: ops.tsum(ops.square(ops.global_max_pool(x))), [("x", x)]).passed


def test_bce_with_logits_layer():
    z = randt((4, 3))
    targets = RNG.uniform((4, 3))
    report = grad_check(lambda: ops.bce_with_logits(z, targets), [("z", z)])
    assert report.passed, report


def test_logsumexp_layer():
    x = randt((3, 5))
    report = grad_check(lambda: ops.tsum(ops.logsumexp(x, axis=1)), [("x", x)])
    assert report.passed, report
