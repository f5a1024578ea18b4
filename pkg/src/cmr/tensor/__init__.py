"""Tensor core: storage, autodiff tape, primitives, RNG, serialization."""

from .core import (Tape, Tensor, add, backward, default_dtype, grad_check,
                   mean_axes, mul, neg, ones, reshape, set_default_dtype,
                   slice_axis, sub, sum_all, zeros)
from .ops import (BatchNormState, batch_norm, bmm, conv2d_3x3,
                  cross_entropy_loss, global_avg_pool_spatial, linear_lastdim,
                  matmul, pointwise_linear, relu, sigmoid, softmax_lastdim,
                  spatial_subsample, temporal_depthwise_conv)
from .rng import kaiming_normal, kaiming_tensor, stream
from .serial import (decode_tensor, encode_tensor, load_checkpoint,
                     load_tensor, save_checkpoint, save_tensor)

__all__ = [
    "Tape", "Tensor", "add", "backward", "default_dtype", "grad_check",
    "mean_axes", "mul", "neg", "ones", "reshape", "set_default_dtype",
    "slice_axis", "sub", "sum_all", "zeros",
    "BatchNormState", "batch_norm", "bmm", "conv2d_3x3", "cross_entropy_loss",
    "global_avg_pool_spatial", "linear_lastdim", "matmul", "pointwise_linear",
    "relu", "sigmoid", "softmax_lastdim", "spatial_subsample",
    "temporal_depthwise_conv",
    "kaiming_normal", "kaiming_tensor", "stream",
    "decode_tensor", "encode_tensor", "load_checkpoint", "load_tensor",
    "save_checkpoint", "save_tensor",
]
