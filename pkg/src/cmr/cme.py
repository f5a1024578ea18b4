"""Channel-wise motion enhancement.

Each frame's channels are recalibrated by a gate computed from *all*
frames of the clip: frames are pooled to channel descriptors, an
all-pairs discrepancy (negative dot product of key descriptors) is
row-softmaxed into mixing weights, descriptors are fused across time,
and a sigmoid projection back to full channel width yields per-frame,
per-channel gates in (0, 1) that multiply the input feature map.

The descriptor projections bottleneck the channel count by reduction
factors r1 (value path) and r2 (key path); the two must be equal and
divide the channel width.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import TypeAlias

import numpy as np

from .errors import ConfigError, ContractError, DimensionError
from .tensor.core import Tensor, _emit, mul, require_clip, require_finite, reshape
from .tensor.ops import bmm, linear_lastdim, sigmoid, softmax_lastdim, global_avg_pool_spatial
from .tensor.rng import kaiming_tensor, stream

#: Per-frame channel gates, shape [N, T, C], entries in (0, 1).
GateVector: TypeAlias = Tensor


@dataclass
class CmeParams:
    """Weights of one enhancement module over C channels.

    w1/b1 project pooled descriptors to C/r1 (value path), w2/b2 to C/r2
    (key path), and w3/b3 map fused descriptors back to C gate logits.
    w3 and all biases start at zero, so initial gates are exactly 0.5
    everywhere: a uniform, direction-free damping of the features.
    """

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    w3: Tensor
    b3: Tensor
    r1: int
    r2: int

    def __post_init__(self):
        if self.r1 != self.r2:
            raise ConfigError(f"reduction factors must match, got r1={self.r1}, r2={self.r2}")
        c = self.w1.shape[1]
        if self.r1 < 1 or c % self.r1 != 0:
            raise ConfigError(f"r1={self.r1} must divide the channel width {c}")
        if self.w1.shape != (c // self.r1, c):
            raise DimensionError(f"w1 shape {self.w1.shape} does not match C={c}, r1={self.r1}")
        if self.w2.shape != (c // self.r2, c):
            raise DimensionError(f"w2 shape {self.w2.shape} does not match C={c}, r2={self.r2}")
        if self.w3.shape != (c, c // self.r1):
            raise DimensionError(f"w3 shape {self.w3.shape} does not match C={c}, r1={self.r1}")
        for name, b, n in (("b1", self.b1, c // self.r1), ("b2", self.b2, c // self.r2),
                           ("b3", self.b3, c)):
            if b.shape != (n,):
                raise DimensionError(f"{name} shape {b.shape} does not match length {n}")

    @property
    def channels(self) -> int:
        return self.w1.shape[1]

    @classmethod
    def init(cls, channels: int, r1: int = 8, r2: int = 8, *, seed: int = 0,
             key: tuple[int, ...] = ()) -> "CmeParams":
        rng = stream(seed, 11, *key)
        cr = channels // r1 if r1 >= 1 and channels % r1 == 0 else 0
        if cr == 0:
            raise ConfigError(f"r1={r1} must divide the channel width {channels}")
        return cls(
            w1=kaiming_tensor(rng, (channels // r1, channels), fan_in=channels),
            b1=Tensor(np.zeros(channels // r1), requires_grad=True),
            w2=kaiming_tensor(rng, (channels // r2, channels), fan_in=channels),
            b2=Tensor(np.zeros(channels // r2), requires_grad=True),
            w3=Tensor(np.zeros((channels, channels // r1)), requires_grad=True),
            b3=Tensor(np.zeros(channels), requires_grad=True),
            r1=r1, r2=r2,
        )


@dataclass
class DiscrepancyMatrix:
    """All-pairs frame discrepancy d and its row-softmax d_hat, [N,T,T]."""

    d: Tensor
    d_hat: Tensor


@lru_cache(maxsize=64)
def _strict_lower(t: int) -> tuple[np.ndarray, np.ndarray]:
    return np.tril_indices(t, -1)


def _neg_gram(k: Tensor) -> Tensor:
    """d[n,t,j] = -sum_c k[n,t,c] k[n,j,c], bitwise symmetric.

    The strict lower triangle is mirrored from the computed upper
    triangle so d[n,t,j] and d[n,j,t] are the same floating-point value.
    """
    kd = k.data
    t = kd.shape[1]
    raw = np.matmul(kd, kd.swapaxes(1, 2))
    sym = raw.copy()
    li, lj = _strict_lower(t)
    sym[:, li, lj] = raw[:, lj, li]

    def bwd(g):
        return (-np.matmul(g + g.swapaxes(1, 2), kd),)

    return _emit(-sym, (k,), bwd, "neg_gram")


def channel_descriptor(x: Tensor, p: CmeParams) -> Tensor:
    """Pooled per-frame descriptors on the value path: [N,T,C] -> [N,T,C/r1]."""
    require_clip(x, "channel_descriptor")
    if x.shape[2] != p.channels:
        raise DimensionError(f"channel_descriptor: input has {x.shape[2]} channels, params expect {p.channels}")
    return linear_lastdim(global_avg_pool_spatial(x), p.w1, p.b1)


def key_descriptor(x: Tensor, p: CmeParams) -> Tensor:
    """Pooled per-frame descriptors on the key path: [N,T,C] -> [N,T,C/r2]."""
    require_clip(x, "key_descriptor")
    if x.shape[2] != p.channels:
        raise DimensionError(f"key_descriptor: input has {x.shape[2]} channels, params expect {p.channels}")
    return linear_lastdim(global_avg_pool_spatial(x), p.w2, p.b2)


def discrepancy(k: Tensor) -> DiscrepancyMatrix:
    """Negative all-pairs dot products of key descriptors plus row softmax.

    Rows of d_hat are attention weights over frames: similar frame pairs
    (large positive dot product) get small weight, dissimilar ones large.
    The self term is included; for T=1 the single weight is 1.
    """
    if k.ndim != 3:
        raise DimensionError(f"discrepancy: expected [N,T,C'] keys, got {k.shape}")
    require_finite(k, "discrepancy")
    d = _neg_gram(k)
    return DiscrepancyMatrix(d=d, d_hat=softmax_lastdim(d))


def fuse_temporal(z: Tensor, d_hat: Tensor) -> Tensor:
    """z_hat[n,t] = z[n,t] + sum_j d_hat[n,t,j] z[n,j].

    d_hat must be row-stochastic; rows off by more than 1e-6 are a
    contract violation (they are softmax outputs upstream).
    """
    if z.ndim != 3 or d_hat.ndim != 3:
        raise DimensionError(f"fuse_temporal: expected [N,T,C'] and [N,T,T], got {z.shape} and {d_hat.shape}")
    n, t, _ = z.shape
    if d_hat.shape != (n, t, t):
        raise DimensionError(f"fuse_temporal: weights {d_hat.shape} do not match descriptors {z.shape}")
    row_err = np.abs(d_hat.data.sum(axis=-1) - 1.0).max()
    if row_err > 1e-6:
        raise ContractError(f"fuse_temporal: rows of d_hat sum to 1 +- 1e-6 at most, worst error {row_err:.3e}")
    return z + bmm(d_hat, z)


def channel_gate(z_hat: Tensor, p: CmeParams) -> GateVector:
    """Sigmoid projection of fused descriptors back to C gates per frame."""
    if z_hat.ndim != 3 or z_hat.shape[2] != p.channels // p.r1:
        raise DimensionError(f"channel_gate: expected [N,T,{p.channels // p.r1}] descriptors, got {z_hat.shape}")
    return sigmoid(linear_lastdim(z_hat, p.w3, p.b3))


def cme_forward(x: Tensor, p: CmeParams, capture: dict | None = None) -> Tensor:
    """Gate every frame's channels using information from all frames."""
    require_clip(x, "cme_forward")
    z = channel_descriptor(x, p)
    k = key_descriptor(x, p)
    dm = discrepancy(k)
    z_hat = fuse_temporal(z, dm.d_hat)
    a = channel_gate(z_hat, p)
    if capture is not None:
        capture["gate"] = a
    n, t, c = a.shape
    return mul(x, reshape(a, (n, t, c, 1, 1)))


def cme_forward_naive(x: Tensor, p: CmeParams) -> np.ndarray:
    """Scalar-loop reference for cme_forward. Forward values only.

    Shares no code with the vectorized path: plain Python loops and
    math.* throughout. Quadratic-and-worse constants, so keep inputs tiny.
    """
    xd = x.data
    n, t, c, h, w = xd.shape
    c1 = p.channels // p.r1
    c2 = p.channels // p.r2
    w1, b1 = p.w1.data, p.b1.data
    w2, b2 = p.w2.data, p.b2.data
    w3, b3 = p.w3.data, p.b3.data

    pooled = [[[0.0] * c for _ in range(t)] for _ in range(n)]
    for ni in range(n):
        for ti in range(t):
            for ci in range(c):
                acc = 0.0
                for hi in range(h):
                    for wi in range(w):
                        acc += xd[ni, ti, ci, hi, wi]
                pooled[ni][ti][ci] = acc / (h * w)

    def project(vec, wm, bv, rows):
        out = []
        for o in range(rows):
            acc = bv[o]
            for i in range(len(vec)):
                acc += wm[o, i] * vec[i]
            out.append(acc)
        return out

    z = [[project(pooled[ni][ti], w1, b1, c1) for ti in range(t)] for ni in range(n)]
    k = [[project(pooled[ni][ti], w2, b2, c2) for ti in range(t)] for ni in range(n)]

    out = np.empty_like(xd)
    for ni in range(n):
        d = [[0.0] * t for _ in range(t)]
        for ti in range(t):
            for tj in range(t):
                acc = 0.0
                for ci in range(c2):
                    acc += k[ni][ti][ci] * k[ni][tj][ci]
                d[ti][tj] = -acc
        d_hat = []
        for ti in range(t):
            row_max = max(d[ti])
            exps = [math.exp(v - row_max) for v in d[ti]]
            norm = sum(exps)
            d_hat.append([e / norm for e in exps])
        for ti in range(t):
            fused = []
            for ci in range(c1):
                acc = z[ni][ti][ci]
                for tj in range(t):
                    acc += d_hat[ti][tj] * z[ni][tj][ci]
                fused.append(acc)
            for ci in range(c):
                logit = b3[ci]
                for i in range(c1):
                    logit += w3[ci, i] * fused[i]
                if logit >= 0:
                    gate = 1.0 / (1.0 + math.exp(-logit))
                else:
                    e = math.exp(logit)
                    gate = e / (1.0 + e)
                for hi in range(h):
                    for wi in range(w):
                        out[ni, ti, ci, hi, wi] = xd[ni, ti, ci, hi, wi] * gate
    return out
