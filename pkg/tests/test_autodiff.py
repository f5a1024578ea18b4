"""Reverse-mode correctness: taped gradients against central differences."""

import numpy as np
import pytest

from cmr.errors import ContractError
from cmr.tensor.core import (Tape, Tensor, add, backward, grad_check,
                             mean_axes, mul, neg, reshape, slice_axis, sub,
                             sum_all)
from cmr.tensor.ops import (BatchNormState, batch_norm, bmm, conv2d_3x3,
                            cross_entropy_loss, global_avg_pool_spatial,
                            linear_lastdim, matmul, pointwise_linear, relu,
                            sigmoid, softmax_lastdim, spatial_subsample,
                            temporal_depthwise_conv)
from cmr.tensor.rng import stream

TOL = 1e-4


def rand(*shape, seed, scale=1.0):
    return Tensor(stream(9, seed, *shape).normal(scale=scale, size=shape))


def test_backward_sum_gives_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    with Tape() as tape:
        loss = sum_all(x)
    grads = backward(tape, loss)
    assert np.array_equal(grads[x.tid].data, np.ones((2, 3)))


def test_backward_half_square_gives_input():
    x = Tensor(np.arange(5.0), requires_grad=True)
    with Tape() as tape:
        loss = mul(sum_all(mul(x, x)), 0.5)
    grads = backward(tape, loss)
    assert np.max(np.abs(grads[x.tid].data - x.data)) <= 1e-15


def test_backward_accumulates_over_fanout():
    x = Tensor([2.0, 3.0], requires_grad=True)
    with Tape() as tape:
        loss = sum_all(add(mul(x, x), x))  # d/dx = 2x + 1
    grads = backward(tape, loss)
    assert np.array_equal(grads[x.tid].data, 2.0 * x.data + 1.0)


def test_backward_rejects_non_scalar_loss():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = mul(x, 2.0)
    with pytest.raises(ContractError):
        backward(tape, y)


def test_grad_check_linear_is_exact():
    w = Tensor(stream(9, 100).normal(size=7))
    x = rand(7, seed=0)
    x.requires_grad = True
    assert grad_check(lambda t: sum_all(mul(t, w)), x) <= 1e-10


def test_grad_check_sigmoid_dot():
    w = Tensor(stream(9, 101).normal(size=5))
    x = rand(5, seed=1)
    x.requires_grad = True
    assert grad_check(lambda t: sum_all(sigmoid(mul(t, w))), x) < 1e-6


@pytest.mark.parametrize("op", [add, sub, mul])
def test_elementwise_binary_grads(op):
    other = rand(3, 4, seed=2)
    for target in range(2):
        x = rand(3, 4, seed=3 + target)
        x.requires_grad = True
        args = (lambda t: (t, other)) if target == 0 else (lambda t: (other, t))
        assert grad_check(lambda t: sum_all(op(*args(t))), x) < TOL


def test_broadcast_grads():
    col = rand(3, 1, seed=5)
    col.requires_grad = True
    full = rand(3, 4, seed=6)
    assert grad_check(lambda t: sum_all(mul(t, full)), col) < TOL
    scalar = Tensor(1.7, requires_grad=True)
    assert grad_check(lambda t: sum_all(add(full, t)), scalar) < TOL


def test_neg_reshape_slice_mean_grads():
    x = rand(2, 3, 4, seed=7)
    x.requires_grad = True
    assert grad_check(lambda t: sum_all(neg(t)), x) <= 1e-10
    assert grad_check(lambda t: sum_all(reshape(t, (6, 4))), x) <= 1e-10
    assert grad_check(lambda t: sum_all(slice_axis(t, 1, 0, 2)), x) <= 1e-10
    assert grad_check(lambda t: sum_all(mean_axes(t, (0, 2))), x) <= 1e-10


def test_matmul_grads():
    b = rand(4, 3, seed=8)
    a = rand(5, 4, seed=9)
    a.requires_grad = True
    assert grad_check(lambda t: sum_all(matmul(t, b)), a) < TOL
    b.requires_grad = True
    assert grad_check(lambda t: sum_all(matmul(a, t)), b) < TOL


def test_bmm_grads():
    a = rand(2, 3, 4, seed=10)
    b = rand(2, 4, 2, seed=11)
    for target, t0 in ((a, True), (b, False)):
        target.requires_grad = True
        if t0:
            assert grad_check(lambda t: sum_all(bmm(t, b)), a) < TOL
        else:
            assert grad_check(lambda t: sum_all(bmm(a, t)), b) < TOL


def test_linear_lastdim_grads():
    x = rand(2, 3, 5, seed=12)
    w = rand(4, 5, seed=13)
    b = rand(4, seed=14)
    for t in (x, w, b):
        t.requires_grad = True
    assert grad_check(lambda t: sum_all(linear_lastdim(t, w, b)), x) < TOL
    assert grad_check(lambda t: sum_all(linear_lastdim(x, t, b)), w) < TOL
    assert grad_check(lambda t: sum_all(linear_lastdim(x, w, t)), b) < TOL


def test_pointwise_linear_grads():
    x = rand(1, 2, 3, 3, 3, seed=15)
    w = rand(2, 3, seed=16)
    b = rand(2, seed=17)
    for t in (x, w, b):
        t.requires_grad = True
    assert grad_check(lambda t: sum_all(pointwise_linear(t, w, b)), x) < TOL
    assert grad_check(lambda t: sum_all(pointwise_linear(x, t, b)), w) < TOL
    assert grad_check(lambda t: sum_all(pointwise_linear(x, w, t)), b) < TOL


@pytest.mark.parametrize("stride", [1, 2])
def test_conv2d_grads(stride):
    x = rand(1, 2, 2, 4, 4, seed=18 + stride)
    w = rand(3, 2, 3, 3, seed=20 + stride)
    x.requires_grad = True
    w.requires_grad = True
    assert grad_check(lambda t: sum_all(conv2d_3x3(t, w, stride=stride)), x) < TOL
    assert grad_check(lambda t: sum_all(conv2d_3x3(x, t, stride=stride)), w) < TOL


def test_spatial_subsample_grad():
    x = rand(1, 2, 2, 5, 5, seed=23)
    x.requires_grad = True
    assert grad_check(lambda t: sum_all(spatial_subsample(t, 2)), x) <= 1e-10


def test_gap_grad():
    x = rand(2, 2, 3, 3, 3, seed=24)
    x.requires_grad = True
    assert grad_check(lambda t: sum_all(global_avg_pool_spatial(t)), x) <= 1e-10


def test_temporal_depthwise_grads():
    x = rand(1, 5, 3, 2, 2, seed=25)
    wt = rand(3, 3, seed=26)
    x.requires_grad = True
    wt.requires_grad = True
    assert grad_check(lambda t: sum_all(temporal_depthwise_conv(t, wt)), x) < TOL
    assert grad_check(lambda t: sum_all(temporal_depthwise_conv(x, t)), wt) < TOL


def test_softmax_grad():
    x = rand(3, 5, seed=27)
    x.requires_grad = True
    coeff = Tensor(stream(9, 28).normal(size=(3, 5)))
    assert grad_check(lambda t: sum_all(mul(softmax_lastdim(t), coeff)), x) < TOL


def test_sigmoid_relu_grads():
    x = rand(40, seed=29)
    x.requires_grad = True
    assert grad_check(lambda t: sum_all(mul(sigmoid(t), t)), x) < TOL
    # keep inputs away from relu's kink so central differences are valid
    y = Tensor(np.where(np.abs(x.data) < 0.1, 0.5, x.data), requires_grad=True)
    assert grad_check(lambda t: sum_all(mul(relu(t), t)), y) < TOL


def test_batch_norm_train_grads():
    x = rand(2, 2, 3, 3, 3, seed=30)
    bn = BatchNormState.init(3)
    bn.gamma.data[:] = stream(9, 31).normal(size=3)
    bn.beta.data[:] = stream(9, 32).normal(size=3)
    coeff = Tensor(stream(9, 33).normal(size=x.shape))
    x.requires_grad = True
    bn.gamma.requires_grad = True
    bn.beta.requires_grad = True
    assert grad_check(lambda t: sum_all(mul(batch_norm(t, bn), coeff)), x) < TOL
    assert grad_check(lambda t: sum_all(mul(batch_norm(x, bn), coeff)), bn.gamma) < TOL
    assert grad_check(lambda t: sum_all(mul(batch_norm(x, bn), coeff)), bn.beta) < TOL


def test_batch_norm_inference_grads():
    x = rand(2, 2, 3, 3, 3, seed=34)
    bn = BatchNormState.init(3)
    batch_norm(rand(2, 2, 3, 3, 3, seed=35), bn)  # populate running stats
    bn.training = False
    x.requires_grad = True
    assert grad_check(lambda t: sum_all(mul(batch_norm(t, bn), t)), x) < TOL


def test_cross_entropy_grad():
    logits = rand(4, 6, seed=36)
    labels = Tensor(stream(9, 37).integers(0, 6, size=4).astype(float))
    logits.requires_grad = True
    assert grad_check(lambda t: cross_entropy_loss(t, labels), logits) < TOL
