"""Forward behavior of the tensor primitives against naive loop references."""

import math

import numpy as np
import pytest

import _oracles as ref
from cmr.errors import (ContractError, DimensionError, NumericError,
                        UninitializedStatsError)
from cmr.tensor.core import Tensor, mean_axes, slice_axis, sum_all
from cmr.tensor.ops import (BatchNormState, batch_norm, bmm, conv2d_3x3,
                            cross_entropy_loss, global_avg_pool_spatial,
                            linear_lastdim, matmul, pointwise_linear, relu,
                            sigmoid, softmax_lastdim, spatial_subsample,
                            temporal_depthwise_conv)
from cmr.tensor.rng import stream


def test_matmul_identity():
    b = Tensor(np.arange(9.0).reshape(3, 3))
    out = matmul(Tensor(np.eye(3)), b)
    assert np.array_equal(out.data, b.data)


def test_matmul_hand_case():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = Tensor([[5.0], [6.0]])
    assert np.array_equal(matmul(a, b).data, [[17.0], [39.0]])


def test_matmul_matches_loop_oracle():
    rng = stream(3, 1)
    a = rng.normal(size=(7, 5))
    b = rng.normal(size=(5, 3))
    out = matmul(Tensor(a), Tensor(b)).data
    assert np.max(np.abs(out - ref.matmul(a, b))) <= 1e-12


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_bmm_matches_per_batch_matmul():
    rng = stream(3, 2)
    a = rng.normal(size=(4, 3, 5))
    b = rng.normal(size=(4, 5, 2))
    out = bmm(Tensor(a), Tensor(b)).data
    want = np.stack([ref.matmul(a[i], b[i]) for i in range(4)])
    assert np.max(np.abs(out - want)) <= 1e-12


def test_linear_lastdim_matches_loop_oracle():
    rng = stream(3, 3)
    x = rng.normal(size=(2, 3, 5))
    w = rng.normal(size=(4, 5))
    b = rng.normal(size=4)
    out = linear_lastdim(Tensor(x), Tensor(w), Tensor(b)).data
    assert np.max(np.abs(out - ref.linear_lastdim(x, w, b))) <= 1e-12


def test_pointwise_linear_identity_weight():
    rng = stream(3, 4)
    x = rng.normal(size=(1, 2, 4, 3, 3))
    out = pointwise_linear(Tensor(x), Tensor(np.eye(4)))
    assert np.max(np.abs(out.data - x)) <= 1e-15


def test_pointwise_linear_zero_weight_bias_only():
    x = Tensor(np.ones((1, 2, 3, 2, 2)))
    b = np.array([5.0, -1.0])
    out = pointwise_linear(x, Tensor(np.zeros((2, 3))), Tensor(b))
    for co in range(2):
        assert np.all(out.data[:, :, co] == b[co])


def test_pointwise_linear_matches_loop_oracle():
    rng = stream(3, 5)
    x = rng.normal(size=(1, 2, 4, 3, 3))
    w = rng.normal(size=(2, 4))
    out = pointwise_linear(Tensor(x), Tensor(w)).data
    assert np.max(np.abs(out - ref.pointwise_linear(x, w))) <= 1e-12


def test_pointwise_linear_channel_mismatch():
    with pytest.raises(DimensionError):
        pointwise_linear(Tensor(np.zeros((1, 1, 3, 2, 2))), Tensor(np.zeros((2, 4))))


def test_conv2d_delta_kernel_is_identity():
    rng = stream(3, 6)
    x = rng.normal(size=(1, 2, 3, 4, 4))
    w = np.zeros((3, 3, 3, 3))
    for c in range(3):
        w[c, c, 1, 1] = 1.0
    out = conv2d_3x3(Tensor(x), Tensor(w))
    assert np.max(np.abs(out.data - x)) <= 1e-15


def test_conv2d_ones_kernel_boundary_sums():
    x = Tensor(np.full((1, 1, 1, 5, 5), 2.0))
    w = Tensor(np.ones((1, 1, 3, 3)))
    out = conv2d_3x3(x, w).data[0, 0, 0]
    assert out[2, 2] == 18.0  # 9 * c interior
    assert out[0, 0] == 8.0   # 4 * c corner under zero padding
    assert out[0, 2] == 12.0  # 6 * c edge


@pytest.mark.parametrize("stride", [1, 2])
def test_conv2d_matches_loop_oracle(stride):
    rng = stream(3, 7, stride)
    x = rng.normal(size=(1, 1, 2, 5, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    out = conv2d_3x3(Tensor(x), Tensor(w), stride=stride).data
    want = ref.conv2d_3x3(x, w, stride=stride)
    assert out.shape == want.shape
    assert np.max(np.abs(out - want)) <= 1e-12


def test_conv2d_channel_mismatch():
    with pytest.raises(DimensionError):
        conv2d_3x3(Tensor(np.zeros((1, 1, 3, 4, 4))), Tensor(np.zeros((2, 4, 3, 3))))


def test_spatial_subsample_matches_loop_oracle():
    rng = stream(3, 8)
    x = rng.normal(size=(1, 2, 2, 5, 5))
    out = spatial_subsample(Tensor(x), 2).data
    want = ref.spatial_subsample(x, 2)
    assert out.shape == (1, 2, 2, 3, 3)
    assert np.array_equal(out, want)


def test_gap_constant_field():
    out = global_avg_pool_spatial(Tensor(np.full((2, 3, 4, 5, 5), 1.5)))
    assert np.all(out.data == 1.5)
    assert out.shape == (2, 3, 4)


def test_gap_hand_case():
    x = np.zeros((1, 1, 1, 2, 2))
    x[0, 0, 0] = [[1.0, 2.0], [3.0, 4.0]]
    assert global_avg_pool_spatial(Tensor(x)).data[0, 0, 0] == 2.5


def test_gap_matches_loop_oracle():
    rng = stream(3, 9)
    x = rng.normal(size=(2, 3, 4, 5, 5))
    out = global_avg_pool_spatial(Tensor(x)).data
    assert np.max(np.abs(out - ref.global_avg_pool(x))) <= 1e-12


def test_softmax_uniform_and_single():
    out = softmax_lastdim(Tensor(np.full((2, 4), 3.0)))
    assert np.max(np.abs(out.data - 0.25)) <= 1e-15
    assert softmax_lastdim(Tensor([[7.0]])).data[0, 0] == 1.0


def test_softmax_closed_form():
    out = softmax_lastdim(Tensor([0.0, math.log(3.0)]))
    assert np.max(np.abs(out.data - [0.25, 0.75])) <= 1e-15


def test_softmax_rows_sum_to_one_and_positive():
    for seed in range(1000):
        x = stream(4, seed).normal(scale=5.0, size=(3, 6))
        s = softmax_lastdim(Tensor(x)).data
        assert np.max(np.abs(s.sum(axis=-1) - 1.0)) <= 1e-12
        assert np.all(s > 0)


def test_softmax_rejects_non_finite():
    with pytest.raises(NumericError):
        softmax_lastdim(Tensor([1.0, np.nan]))


def test_sigmoid_relu_basics():
    assert sigmoid(Tensor([0.0])).data[0] == 0.5
    assert np.array_equal(relu(Tensor([-2.0, 2.0])).data, [0.0, 2.0])


def test_sigmoid_symmetry_identity():
    x = stream(3, 10).normal(scale=10.0, size=200)
    total = sigmoid(Tensor(x)).data + sigmoid(Tensor(-x)).data
    assert np.max(np.abs(total - 1.0)) <= 1e-12


def test_sigmoid_extreme_inputs_stay_finite():
    out = sigmoid(Tensor([-1000.0, 1000.0])).data
    assert np.all(np.isfinite(out))
    assert out[0] < 1e-300 or out[0] == 0.0
    assert out[1] == 1.0


def test_batch_norm_zero_input_zero_beta():
    bn = BatchNormState.init(3, gamma=2.0)
    out = batch_norm(Tensor(np.zeros((2, 2, 3, 4, 4))), bn)
    assert np.all(out.data == 0.0)


def test_batch_norm_train_matches_loop_oracle():
    rng = stream(3, 11)
    x = rng.normal(size=(2, 2, 3, 4, 4))
    bn = BatchNormState.init(3)
    bn.gamma.data[:] = rng.normal(size=3)
    bn.beta.data[:] = rng.normal(size=3)
    out = batch_norm(Tensor(x), bn).data
    want, means, variances = ref.batch_norm_train(x, bn.gamma.data, bn.beta.data)
    assert np.max(np.abs(out - want)) <= 1e-10
    # running stats: one step of momentum 0.1 from (0, 1), unbiased variance
    count = 2 * 2 * 4 * 4
    assert np.max(np.abs(bn.running_mean - 0.1 * means)) <= 1e-12
    want_var = 0.9 * 1.0 + 0.1 * variances * count / (count - 1)
    assert np.max(np.abs(bn.running_var - want_var)) <= 1e-12


def test_batch_norm_inference_uses_running_stats():
    rng = stream(3, 12)
    bn = BatchNormState.init(2)
    batch_norm(Tensor(rng.normal(size=(2, 2, 2, 3, 3))), bn)
    bn.training = False
    x = rng.normal(size=(1, 2, 2, 3, 3))
    out = batch_norm(Tensor(x), bn).data
    want = ref.batch_norm_infer(x, bn.gamma.data, bn.beta.data,
                                bn.running_mean, bn.running_var)
    assert np.max(np.abs(out - want)) <= 1e-12


def test_batch_norm_inference_before_training_rejected():
    bn = BatchNormState.init(2)
    bn.training = False
    with pytest.raises(UninitializedStatsError):
        batch_norm(Tensor(np.zeros((1, 1, 2, 2, 2))), bn)


def test_temporal_depthwise_identity_kernel():
    rng = stream(3, 13)
    x = rng.normal(size=(1, 5, 3, 2, 2))
    wt = np.tile([0.0, 1.0, 0.0], (3, 1))
    out = temporal_depthwise_conv(Tensor(x), Tensor(wt))
    assert np.array_equal(out.data, x)


def test_temporal_depthwise_matches_loop_oracle():
    rng = stream(3, 14)
    x = rng.normal(size=(1, 5, 3, 2, 2))
    wt = rng.normal(size=(3, 3))
    out = temporal_depthwise_conv(Tensor(x), Tensor(wt)).data
    assert np.max(np.abs(out - ref.temporal_depthwise(x, wt))) <= 1e-12


def test_temporal_depthwise_rejects_even_kernel():
    with pytest.raises(ContractError):
        temporal_depthwise_conv(Tensor(np.zeros((1, 2, 2, 2, 2))),
                                Tensor(np.zeros((2, 2))))


def test_cross_entropy_uniform_logits():
    loss = cross_entropy_loss(Tensor(np.zeros((3, 8))), Tensor([0.0, 3.0, 7.0]))
    assert abs(loss.item() - math.log(8.0)) <= 1e-12


def test_cross_entropy_confident_logit():
    logits = np.zeros((1, 4))
    logits[0, 2] = 20.0
    loss = cross_entropy_loss(Tensor(logits), Tensor([2.0]))
    assert loss.item() < 1e-3


def test_cross_entropy_matches_composition_oracle():
    rng = stream(3, 15)
    logits = rng.normal(size=(5, 7))
    labels = rng.integers(0, 7, size=5).astype(float)
    loss = cross_entropy_loss(Tensor(logits), Tensor(labels))
    assert abs(loss.item() - ref.cross_entropy(logits, labels)) <= 1e-12


def test_cross_entropy_rejects_bad_labels():
    with pytest.raises(IndexError):
        cross_entropy_loss(Tensor(np.zeros((2, 3))), Tensor([0.0, 3.0]))
    with pytest.raises(ContractError):
        cross_entropy_loss(Tensor(np.zeros((2, 3))), Tensor([0.0, 1.5]))


def test_cross_entropy_requires_2d_logits():
    with pytest.raises(DimensionError):
        cross_entropy_loss(Tensor(np.zeros(3)), Tensor([0.0]))


def test_slice_and_reductions():
    x = Tensor(np.arange(24.0).reshape(2, 3, 4))
    sl = slice_axis(x, 1, 1, 3)
    assert np.array_equal(sl.data, x.data[:, 1:3])
    assert sum_all(x).item() == x.data.sum()
    m = mean_axes(x, (0, 2))
    assert np.max(np.abs(m.data - x.data.mean(axis=(0, 2)))) <= 1e-15
