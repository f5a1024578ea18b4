"""Differentiable primitives for clip-batch networks.

Every function here computes its forward value with numpy, validates its
contract, and registers a hand-derived backward rule on the active tape.
Clip batches are laid out ``[N, T, C, H, W]``: batch, frames, channels,
height, width.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, DimensionError, UninitializedStatsError
from .core import (Tensor, _emit, require_clip, require_finite)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product [m,k] @ [k,n] -> [m,n]."""
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul: expected 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions disagree, {a.shape} vs {b.shape}")

    def bwd(g):
        return (g @ b.data.T, a.data.T @ g)

    return _emit(a.data @ b.data, (a, b), bwd, "matmul")


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product [B,m,k] @ [B,k,n] -> [B,m,n]."""
    if a.ndim != 3 or b.ndim != 3:
        raise DimensionError(f"bmm: expected 3-D operands, got {a.shape} and {b.shape}")
    if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise DimensionError(f"bmm: incompatible shapes {a.shape} and {b.shape}")

    def bwd(g):
        return (np.matmul(g, b.data.swapaxes(1, 2)), np.matmul(a.data.swapaxes(1, 2), g))

    return _emit(np.matmul(a.data, b.data), (a, b), bwd, "bmm")


def linear_lastdim(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map on the trailing axis: y[..., o] = sum_i x[..., i] w[o, i] + b[o]."""
    if w.ndim != 2:
        raise DimensionError(f"linear_lastdim: weight must be 2-D, got {w.shape}")
    cin = x.shape[-1] if x.ndim else 0
    if x.ndim < 1 or w.shape[1] != cin:
        raise DimensionError(f"linear_lastdim: weight {w.shape} does not match input {x.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise DimensionError(f"linear_lastdim: bias {b.shape} does not match weight {w.shape}")
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data
    cout = w.shape[0]
    lead_axes = tuple(range(x.ndim - 1))

    def bwd(g):
        gx = g @ w.data
        gw = g.reshape(-1, cout).T @ x.data.reshape(-1, cin)
        gb = None if b is None else g.sum(axis=lead_axes)
        return (gx, gw) if b is None else (gx, gw, gb)

    inputs = (x, w) if b is None else (x, w, b)
    return _emit(out, inputs, bwd, "linear_lastdim")


def pointwise_linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """1x1 convolution over channels of a clip batch.

    x: [N,T,Cin,H,W], w: [Cout,Cin], optional b: [Cout].
    """
    require_clip(x, "pointwise_linear")
    if w.ndim != 2 or w.shape[1] != x.shape[2]:
        raise DimensionError(f"pointwise_linear: weight {w.shape} does not match channels of {x.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise DimensionError(f"pointwise_linear: bias {b.shape} does not match weight {w.shape}")
    # [N,T,C,H,W] x [O,C] -> [N,T,H,W,O] -> [N,T,O,H,W]
    out = np.moveaxis(np.tensordot(x.data, w.data, axes=([2], [1])), -1, 2)
    if b is not None:
        out = out + b.data.reshape(1, 1, -1, 1, 1)

    def bwd(g):
        gx = np.moveaxis(np.tensordot(g, w.data, axes=([2], [0])), -1, 2)
        gw = np.einsum("ntohw,ntchw->oc", g, x.data, optimize=True)
        if b is None:
            return (gx, gw)
        return (gx, gw, g.sum(axis=(0, 1, 3, 4)))

    inputs = (x, w) if b is None else (x, w, b)
    return _emit(out, inputs, bwd, "pointwise_linear")


def conv2d_3x3(x: Tensor, w: Tensor, stride: int = 1) -> Tensor:
    """3x3 spatial convolution with zero padding 1, shared across frames.

    x: [N,T,Cin,H,W], w: [Cout,Cin,3,3]. stride 1 preserves the spatial
    size; stride 2 halves it (rounding up).
    """
    require_clip(x, "conv2d_3x3")
    if w.ndim != 4 or w.shape[2:] != (3, 3):
        raise DimensionError(f"conv2d_3x3: weight must be [O,C,3,3], got {w.shape}")
    if w.shape[1] != x.shape[2]:
        raise DimensionError(f"conv2d_3x3: weight {w.shape} does not match channels of {x.shape}")
    if stride not in (1, 2):
        raise ContractError(f"conv2d_3x3: stride must be 1 or 2, got {stride}")
    n, t, c, h, wd = x.shape
    ho = (h + 2 - 3) // stride + 1
    wo = (wd + 2 - 3) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (0, 0), (1, 1), (1, 1)))

    def taps(arr, di, dj):
        return arr[:, :, :, di:di + (ho - 1) * stride + 1:stride,
                   dj:dj + (wo - 1) * stride + 1:stride]

    acc = np.zeros((n, t, ho, wo, w.shape[0]), dtype=x.data.dtype)
    for di in range(3):
        for dj in range(3):
            acc += np.tensordot(taps(xp, di, dj), w.data[:, :, di, dj], axes=([2], [1]))
    out = np.moveaxis(acc, -1, 2)

    def bwd(g):
        gp = np.moveaxis(g, 2, -1)  # [N,T,Ho,Wo,O]
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w.data)
        for di in range(3):
            for dj in range(3):
                gw[:, :, di, dj] = np.einsum("ntijo,ntcij->oc", gp, taps(xp, di, dj),
                                             optimize=True)
                gxs = np.tensordot(gp, w.data[:, :, di, dj], axes=([4], [0]))
                taps(gxp, di, dj)[...] += np.moveaxis(gxs, -1, 2)
        return (gxp[:, :, :, 1:1 + h, 1:1 + wd], gw)

    return _emit(out, (x, w), bwd, "conv2d_3x3")


def spatial_subsample(x: Tensor, stride: int) -> Tensor:
    """Keep every ``stride``-th spatial position (the 1x1 strided-conv grid)."""
    require_clip(x, "spatial_subsample")
    if stride < 1:
        raise ContractError(f"spatial_subsample: stride must be >= 1, got {stride}")
    out = x.data[:, :, :, ::stride, ::stride]

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[:, :, :, ::stride, ::stride] = g
        return (gx,)

    return _emit(out.copy(), (x,), bwd, "spatial_subsample")


def global_avg_pool_spatial(x: Tensor) -> Tensor:
    """Mean over (H, W): [N,T,C,H,W] -> [N,T,C]."""
    require_clip(x, "global_avg_pool_spatial")
    n, t, c, h, w = x.shape
    out = x.data.mean(axis=(3, 4))

    def bwd(g):
        return (np.broadcast_to(g[:, :, :, None, None], x.shape) / (h * w),)

    return _emit(out, (x,), bwd, "global_avg_pool_spatial")


def temporal_depthwise_conv(x: Tensor, wt: Tensor) -> Tensor:
    """Per-channel 1-D convolution along the frame axis, zero padded.

    x: [N,T,C,H,W], wt: [C,K] with K odd. Each channel c is filtered by
    its own K-tap kernel wt[c] across time, identically at every spatial
    position. Kernel rows [0,1,0] make this the identity.
    """
    require_clip(x, "temporal_depthwise_conv")
    if wt.ndim != 2:
        raise DimensionError(f"temporal_depthwise_conv: kernel must be [C,K], got {wt.shape}")
    c, k = wt.shape
    if c != x.shape[2]:
        raise DimensionError(f"temporal_depthwise_conv: kernel {wt.shape} does not match channels of {x.shape}")
    if k % 2 == 0:
        raise ContractError(f"temporal_depthwise_conv: kernel width must be odd, got {k}")
    t = x.shape[1]
    pad = k // 2
    xp = np.pad(x.data, ((0, 0), (pad, pad), (0, 0), (0, 0), (0, 0)))
    out = np.zeros_like(x.data)
    for kk in range(k):
        out += xp[:, kk:kk + t] * wt.data[:, kk].reshape(1, 1, c, 1, 1)

    def bwd(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(wt.data)
        for kk in range(k):
            gxp[:, kk:kk + t] += g * wt.data[:, kk].reshape(1, 1, c, 1, 1)
            gw[:, kk] = np.einsum("ntchw,ntchw->c", g, xp[:, kk:kk + t], optimize=True)
        return (gxp[:, pad:pad + t], gw)

    return _emit(out, (x, wt), bwd, "temporal_depthwise_conv")


def softmax_lastdim(x: Tensor) -> Tensor:
    """Row softmax over the trailing axis, computed with max subtraction."""
    require_finite(x, "softmax_lastdim")
    if x.ndim < 1 or x.shape[-1] < 1:
        raise DimensionError(f"softmax_lastdim: need a non-empty trailing axis, got {x.shape}")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _emit(s, (x,), bwd, "softmax_lastdim")


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function, evaluated in the overflow-safe branch per sign."""
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)

    def bwd(g):
        return (g * out * (1.0 - out),)

    return _emit(out, (x,), bwd, "sigmoid")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def bwd(g):
        return (g * mask,)

    return _emit(np.where(mask, x.data, 0.0), (x,), bwd, "relu")


@dataclass
class BatchNormState:
    """Per-channel batch normalization parameters, buffers, and mode.

    gamma/beta are trainable; running_mean/running_var are in-place
    updated buffers (the documented side effect of training-mode calls).
    Statistics are taken over (N, T, H, W) so every frame of every clip
    in the batch contributes to each channel's mean and variance.
    """

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1
    training: bool = True
    batches_tracked: int = 0

    @classmethod
    def init(cls, channels: int, gamma: float = 1.0) -> "BatchNormState":
        """Fresh state; gamma=0 builds an identity-at-init residual branch."""
        if channels < 1:
            raise ContractError(f"BatchNormState: channels must be >= 1, got {channels}")
        return cls(
            gamma=Tensor(np.full(channels, gamma), requires_grad=True),
            beta=Tensor(np.zeros(channels), requires_grad=True),
            running_mean=np.zeros(channels, dtype=np.float64),
            running_var=np.ones(channels, dtype=np.float64),
        )

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


def batch_norm(x: Tensor, state: BatchNormState) -> Tensor:
    """Batch normalization over (N, T, H, W) per channel.

    Training mode normalizes with biased batch statistics and updates the
    running buffers in place (unbiased variance, torch-style momentum).
    Inference mode normalizes with the running buffers and requires at
    least one prior training batch.
    """
    require_clip(x, "batch_norm")
    c = x.shape[2]
    if state.channels != c:
        raise DimensionError(f"batch_norm: state has {state.channels} channels, input has {c}")
    axes = (0, 1, 3, 4)
    count = x.shape[0] * x.shape[1] * x.shape[3] * x.shape[4]
    gview = state.gamma.data.reshape(1, 1, c, 1, 1)

    if state.training:
        m = x.data.mean(axis=axes)
        v = x.data.var(axis=axes)
        ivar = 1.0 / np.sqrt(v + state.eps)
        xhat = (x.data - m.reshape(1, 1, c, 1, 1)) * ivar.reshape(1, 1, c, 1, 1)
        out = xhat * gview + state.beta.data.reshape(1, 1, c, 1, 1)

        mom = state.momentum
        v_run = v * count / (count - 1) if count > 1 else v
        state.running_mean = (1.0 - mom) * state.running_mean + mom * m
        state.running_var = (1.0 - mom) * state.running_var + mom * v_run
        state.batches_tracked += 1

        def bwd(g):
            gbeta = g.sum(axis=axes)
            ggamma = (g * xhat).sum(axis=axes)
            gxh = g * gview
            s1 = gxh.sum(axis=axes, keepdims=True)
            s2 = (gxh * xhat).sum(axis=axes, keepdims=True)
            gx = (ivar.reshape(1, 1, c, 1, 1) / count) * (count * gxh - s1 - xhat * s2)
            return (gx, ggamma, gbeta)

        return _emit(out, (x, state.gamma, state.beta), bwd, "batch_norm")

    if state.batches_tracked == 0:
        raise UninitializedStatsError("batch_norm: inference requested before any training batch")
    ivar = (1.0 / np.sqrt(state.running_var + state.eps)).reshape(1, 1, c, 1, 1)
    xhat = (x.data - state.running_mean.reshape(1, 1, c, 1, 1)) * ivar
    out = xhat * gview + state.beta.data.reshape(1, 1, c, 1, 1)

    def bwd(g):
        return (g * gview * ivar, (g * xhat).sum(axis=axes), g.sum(axis=axes))

    return _emit(out, (x, state.gamma, state.beta), bwd, "batch_norm")


def cross_entropy_loss(logits: Tensor, labels: Tensor) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label].

    logits: [N,K]; labels: [N] integer-valued class ids in [0, K).
    """
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy_loss: logits must be [N,K], got {logits.shape}")
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise DimensionError(f"cross_entropy_loss: labels {labels.shape} do not match logits {logits.shape}")
    n, k = logits.shape
    lab = labels.data.astype(np.int64)
    if not np.all(labels.data == lab):
        raise ContractError("cross_entropy_loss: labels must be integer-valued")
    if lab.min() < 0 or lab.max() >= k:
        raise IndexError(f"cross_entropy_loss: label out of range [0, {k})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    loss = -logp[rows, lab].mean()

    def bwd(g):
        p = np.exp(logp)
        p[rows, lab] -= 1.0
        return (p * (float(g) / n), None)

    return _emit(np.asarray(loss, dtype=logits.data.dtype), (logits, labels), bwd,
                 "cross_entropy_loss")
