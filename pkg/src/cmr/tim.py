"""Temporal interaction: per-channel convolution along the frame axis.

A stand-in for the host network's temporal mixing: each channel owns a
K-tap kernel (K = 3 by default) applied depthwise across time with zero
padding. Kernels start as the identity [0, 1, 0], so an untrained module
passes clips through unchanged and training only has to learn temporal
offsets/differences per channel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor.core import Tensor, require_clip
from .tensor.ops import temporal_depthwise_conv


@dataclass
class TimParams:
    """Depthwise temporal kernels, one row of K taps per channel."""

    wt: Tensor

    def __post_init__(self):
        if self.wt.ndim != 2:
            raise DimensionError(f"wt must be [C,K], got {self.wt.shape}")
        if self.wt.shape[1] % 2 == 0:
            raise ConfigError(f"temporal kernel width must be odd, got {self.wt.shape[1]}")

    @property
    def channels(self) -> int:
        return self.wt.shape[0]

    @property
    def taps(self) -> int:
        return self.wt.shape[1]

    @classmethod
    def init(cls, channels: int, taps: int = 3) -> "TimParams":
        if taps % 2 == 0 or taps < 1:
            raise ConfigError(f"temporal kernel width must be odd and positive, got {taps}")
        wt = np.zeros((channels, taps))
        wt[:, taps // 2] = 1.0
        return cls(wt=Tensor(wt, requires_grad=True))


def tim_forward(x: Tensor, p: TimParams) -> Tensor:
    """Apply the per-channel temporal kernels to a clip batch."""
    require_clip(x, "tim_forward")
    if x.shape[2] != p.channels:
        raise DimensionError(f"tim_forward: input has {x.shape[2]} channels, params expect {p.channels}")
    return temporal_depthwise_conv(x, p.wt)
