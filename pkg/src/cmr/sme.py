"""Spatial-wise motion enhancement.

Positions whose feature vectors change between adjacent frames are
emphasized: a per-position cosine similarity map s between frame t and
t+1 is turned into motion weights (1 - s), the reweighted features pass
through a bias-free 1x1 conv and a zero-gamma batch norm, and the result
is added back to the input. At initialization the branch contributes
exactly zero, so the module starts as the identity.

The similarity of the last frame has no forward neighbor; the map for
T-1 is copied to T, keeping one weight per frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError
from .tensor.core import Tensor, _emit, mul, require_clip, reshape, sub
from .tensor.ops import BatchNormState, batch_norm, pointwise_linear
from .tensor.rng import kaiming_tensor, stream

COSINE_EPS = 1e-8


@dataclass
class SmeParams:
    """Weights of one spatial enhancement module over C channels.

    wc is the bias-free 1x1 conv; bn starts with gamma = 0 so the branch
    output is exactly zero until training moves gamma (any needed shift
    comes from bn's beta, which is why wc carries no bias).
    """

    wc: Tensor
    bn: BatchNormState

    def __post_init__(self):
        c = self.wc.shape[0] if self.wc.ndim == 2 else -1
        if self.wc.ndim != 2 or self.wc.shape != (c, c):
            raise DimensionError(f"wc must be square [C,C], got {self.wc.shape}")
        if self.bn.channels != c:
            raise DimensionError(f"bn has {self.bn.channels} channels, wc has {c}")

    @property
    def channels(self) -> int:
        return self.wc.shape[0]

    @classmethod
    def init(cls, channels: int, *, seed: int = 0, key: tuple[int, ...] = ()) -> "SmeParams":
        rng = stream(seed, 12, *key)
        return cls(wc=kaiming_tensor(rng, (channels, channels), fan_in=channels),
                   bn=BatchNormState.init(channels, gamma=0.0))


def pointwise_cosine(x: Tensor) -> Tensor:
    """Cosine similarity of adjacent frames at each position.

    x: [N,T,C,H,W] with T >= 2; result: [N,T-1,H,W], entries in [-1, 1].
    The channel vectors at (n,t,h,w) and (n,t+1,h,w) are compared as
    dot / max(|a| |b|, 1e-8). Two exact rules keep static content
    honest: bitwise-identical vectors score exactly 1, and positions
    where both norms fall below 1e-8 are defined as 1 (static reading of
    near-empty features). Frozen positions carry zero gradient, matching
    the cosine's stationary point at equality.
    """
    require_clip(x, "pointwise_cosine")
    t = x.shape[1]
    if t < 2:
        raise ContractError(f"pointwise_cosine: needs at least 2 frames, got {t}")
    a = x.data[:, :-1]
    b = x.data[:, 1:]
    dot = (a * b).sum(axis=2)
    qa = (a * a).sum(axis=2)
    qb = (b * b).sum(axis=2)
    na = np.sqrt(qa)
    nb = np.sqrt(qb)
    prod = na * nb
    denom = np.maximum(prod, COSINE_EPS)
    frozen = ((dot == qa) & (qa == qb)) | ((na < COSINE_EPS) & (nb < COSINE_EPS))
    s = np.where(frozen, 1.0, dot / denom)

    def bwd(g):
        def expand(arr):
            return arr[:, :, None, :, :]

        gl = np.where(frozen, 0.0, g)
        coef = np.where(prod >= COSINE_EPS, s, 0.0)
        coef = np.where(frozen, 0.0, coef)
        qa_s = np.where(qa > 0, qa, 1.0)
        qb_s = np.where(qb > 0, qb, 1.0)
        ga = expand(gl) * (b / expand(denom) - expand(coef / qa_s) * a)
        gb = expand(gl) * (a / expand(denom) - expand(coef / qb_s) * b)
        gx = np.zeros_like(x.data)
        gx[:, :-1] += ga
        gx[:, 1:] += gb
        return (gx,)

    return _emit(s, (x,), bwd, "pointwise_cosine")


def extend_similarity(s: Tensor) -> Tensor:
    """Append a copy of the last temporal slice: [N,T-1,H,W] -> [N,T,H,W]."""
    if s.ndim != 4:
        raise DimensionError(f"extend_similarity: expected [N,T-1,H,W], got {s.shape}")
    out = np.concatenate([s.data, s.data[:, -1:]], axis=1)

    def bwd(g):
        gi = g[:, :-1].copy()
        gi[:, -1] += g[:, -1]
        return (gi,)

    return _emit(out, (s,), bwd, "extend_similarity")


def sme_forward(x: Tensor, p: SmeParams, capture: dict | None = None) -> Tensor:
    """v = BN(conv1x1(x * (1 - s))) + x, with s the extended similarity."""
    require_clip(x, "sme_forward")
    if x.shape[2] != p.channels:
        raise DimensionError(f"sme_forward: input has {x.shape[2]} channels, params expect {p.channels}")
    n, t, c, h, w = x.shape
    if t == 1:
        # No adjacent pair exists; the module passes single frames through.
        if capture is not None:
            capture["sme_weight"] = Tensor(np.zeros((n, 1, h, w)))
        return x
    s = extend_similarity(pointwise_cosine(x))
    weight = sub(1.0, s)
    if capture is not None:
        capture["sme_weight"] = weight
    gated = mul(x, reshape(weight, (n, t, 1, h, w)))
    branch = batch_norm(pointwise_linear(gated, p.wc), p.bn)
    return branch + x


def sme_forward_naive(x: Tensor, p: SmeParams) -> np.ndarray:
    """Scalar-loop reference for sme_forward. Forward values only.

    Mirrors the vectorized semantics (including the exact static rules
    and the batch-norm mode of p.bn) without touching running buffers.
    """
    xd = x.data
    n, t, c, h, w = xd.shape
    if t == 1:
        return xd.copy()
    wc = p.wc.data
    gamma, beta = p.bn.gamma.data, p.bn.beta.data

    sim = [[[[0.0] * w for _ in range(h)] for _ in range(t)] for _ in range(n)]
    for ni in range(n):
        for ti in range(t - 1):
            for hi in range(h):
                for wi in range(w):
                    dot = qa = qb = 0.0
                    for ci in range(c):
                        av = xd[ni, ti, ci, hi, wi]
                        bv = xd[ni, ti + 1, ci, hi, wi]
                        dot += av * bv
                        qa += av * av
                        qb += bv * bv
                    na = math.sqrt(qa)
                    nb = math.sqrt(qb)
                    if (dot == qa and qa == qb) or (na < COSINE_EPS and nb < COSINE_EPS):
                        sval = 1.0
                    else:
                        sval = dot / max(na * nb, COSINE_EPS)
                    sim[ni][ti][hi][wi] = sval
        for hi in range(h):
            for wi in range(w):
                sim[ni][t - 1][hi][wi] = sim[ni][t - 2][hi][wi]

    pre = np.empty_like(xd)
    for ni in range(n):
        for ti in range(t):
            for hi in range(h):
                for wi in range(w):
                    motion = 1.0 - sim[ni][ti][hi][wi]
                    for co in range(c):
                        acc = 0.0
                        for ci in range(c):
                            acc += wc[co, ci] * xd[ni, ti, ci, hi, wi] * motion
                        pre[ni, ti, co, hi, wi] = acc

    out = np.empty_like(xd)
    count = n * t * h * w
    for ci in range(c):
        if p.bn.training:
            mean = 0.0
            for ni in range(n):
                for ti in range(t):
                    for hi in range(h):
                        for wi in range(w):
                            mean += pre[ni, ti, ci, hi, wi]
            mean /= count
            var = 0.0
            for ni in range(n):
                for ti in range(t):
                    for hi in range(h):
                        for wi in range(w):
                            dv = pre[ni, ti, ci, hi, wi] - mean
                            var += dv * dv
            var /= count
        else:
            mean = p.bn.running_mean[ci]
            var = p.bn.running_var[ci]
        scale = gamma[ci] / math.sqrt(var + p.bn.eps)
        for ni in range(n):
            for ti in range(t):
                for hi in range(h):
                    for wi in range(w):
                        normed = (pre[ni, ti, ci, hi, wi] - mean) * scale + beta[ci]
                        out[ni, ti, ci, hi, wi] = normed + xd[ni, ti, ci, hi, wi]
    return out
