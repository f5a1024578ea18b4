"""Deterministic seeded random streams and parameter initializers.

All randomness in the package flows through ``stream``: a counter-based
64-bit Philox generator keyed by a root seed plus an explicit tuple of
stream keys. Streams are splittable by construction (distinct key tuples
give independent streams) and reproducible across platforms, so the same
(seed, keys) always yields the same draws regardless of draw order
elsewhere in the program.
"""

from __future__ import annotations

import numpy as np

from .core import Tensor, default_dtype


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for the given root seed and key path."""
    if seed < 0:
        raise ValueError("seed must be a non-negative integer")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((int(seed),) + tuple(int(k) for k in keys))))


def kaiming_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    """Fan-in scaled normal init, std = sqrt(2 / fan_in)."""
    if fan_in <= 0:
        raise ValueError("fan_in must be positive")
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(default_dtype())


def kaiming_tensor(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int,
                   name: str | None = None) -> Tensor:
    return Tensor(kaiming_normal(rng, shape, fan_in), requires_grad=True, name=name)
