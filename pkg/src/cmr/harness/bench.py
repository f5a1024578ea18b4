"""Forward-pass micro-benchmarks across clip lengths and batch sizes.

Each entry times isolated forward calls on synthetic tensors. Small
modules are timed timeit-style: every repetition measures a fixed inner
loop of calls and records the per-call mean, so the report still holds
exactly ``repetitions`` raw timings while staying above timer noise. The
``cme_discrepancy`` entry isolates the all-pairs discrepancy plus its row
softmax, whose cost grows with the square of the clip length.
"""

from __future__ import annotations

import gc
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..blocks import (BlockParams, NetworkConfig, build_network,
                      block_a_forward, block_b_forward, network_forward,
                      set_training)
from ..cme import CmeParams, cme_forward, discrepancy
from ..errors import ContractError
from ..sme import SmeParams, sme_forward
from ..tensor.core import Tensor
from ..tensor.rng import stream
from ..tim import TimParams, tim_forward

CSV_HEADER = "module,T,batch,median_ms,iqr_ms,throughput_cps"

MODULES = ("cme", "cme_discrepancy", "sme", "tim", "block_a", "block_b", "network")


@dataclass
class BenchEntry:
    module: str
    frames: int
    batch: int
    timings_ms: list[float]

    @property
    def median_ms(self) -> float:
        return float(np.median(self.timings_ms))

    @property
    def iqr_ms(self) -> float:
        q75, q25 = np.percentile(self.timings_ms, [75, 25])
        return float(q75 - q25)

    @property
    def throughput_cps(self) -> float:
        return self.batch * 1000.0 / self.median_ms


@dataclass
class BenchReport:
    warmup: int
    repetitions: int
    entries: list[BenchEntry] = field(default_factory=list)

    def entry(self, module: str, frames: int, batch: int) -> BenchEntry:
        for e in self.entries:
            if (e.module, e.frames, e.batch) == (module, frames, batch):
                return e
        raise KeyError(f"no bench entry for {(module, frames, batch)}")

    def to_csv(self) -> str:
        lines = [CSV_HEADER]
        for e in self.entries:
            lines.append(f"{e.module},{e.frames},{e.batch},{e.median_ms!r},"
                         f"{e.iqr_ms!r},{e.throughput_cps!r}")
        return "\n".join(lines) + "\n"


def _time_one(fn, warmup: int, repetitions: int, inner: int) -> list[float]:
    for _ in range(warmup):
        fn()
    # Collection pauses would swamp microsecond-scale entries.
    gc_was_on = gc.isenabled()
    gc.disable()
    try:
        timings = []
        for _ in range(repetitions):
            t0 = time.perf_counter()
            for _ in range(inner):
                fn()
            timings.append((time.perf_counter() - t0) * 1000.0 / inner)
    finally:
        if gc_was_on:
            gc.enable()
    return timings


def _module_plan(frames: int, batch: int, channels: int, spatial: int,
                 reduction: int, desc_width: int) -> list[tuple[str, object, int]]:
    """(module, zero-arg callable, inner-loop count) entries for one setting."""
    rng = stream(1234, frames, batch)
    x = Tensor(rng.normal(size=(batch, frames, channels, spatial, spatial)))
    cme_p = CmeParams.init(channels, reduction, reduction, seed=1)
    # Generic weights, so gate paths are exercised rather than the
    # zero-init shortcut.
    cme_p.w3.data[...] = rng.normal(size=cme_p.w3.shape) * 0.1
    sme_p = SmeParams.init(channels, seed=2)
    sme_p.bn.training = True
    tim_p = TimParams.init(channels)
    keys = Tensor(rng.normal(size=(batch, frames, desc_width)))

    ncfg = NetworkConfig(frames=frames)
    net = build_network(ncfg, seed=3)
    set_training(net, True)
    xin = Tensor(rng.normal(size=(batch, frames, 1, 32, 32)))
    block_b = net.stages[0][0]
    block_a = net.stages[0][1]
    xblk = Tensor(rng.normal(size=(batch, frames, 16, spatial, spatial)))

    return [
        ("cme", lambda: cme_forward(x, cme_p), 8),
        ("cme_discrepancy", lambda: discrepancy(keys), 128),
        ("sme", lambda: sme_forward(x, sme_p), 8),
        ("tim", lambda: tim_forward(x, tim_p), 16),
        ("block_a", lambda: block_a_forward(xblk, block_a), 4),
        ("block_b", lambda: block_b_forward(xblk, block_b), 4),
        ("network", lambda: network_forward(xin, net), 1),
    ]


def benchmark(t_values: tuple[int, ...] = (4, 8, 16), batches: tuple[int, ...] = (1, 8),
              repetitions: int = 9, warmup: int = 3, channels: int = 32,
              spatial: int = 16, reduction: int = 8, desc_width: int = 512,
              out_csv: str | Path | None = None) -> BenchReport:
    """Time each module and the full network over T and batch settings.

    Module rows use small desk-scale inputs ([batch, T, channels, spatial,
    spatial]). The ``cme_discrepancy`` row is the exception: its key
    descriptors are ``desc_width`` wide, sized like the deepest stage of a
    full-scale backbone (2048 channels at reduction 4), so the stage's
    quadratic growth in T is measured above timer dispatch noise.

    Repetitions are interleaved across clip lengths: repetition i of every
    (module, T) cell is taken back to back, so slow environmental drift
    (frequency scaling, a neighboring process) inflates all T settings of
    a repetition equally instead of poisoning one contiguous section.
    """
    if repetitions < 5:
        raise ContractError(f"need at least 5 repetitions, got {repetitions}")
    if warmup < 3:
        raise ContractError(f"need at least 3 warmup calls, got {warmup}")
    report = BenchReport(warmup=warmup, repetitions=repetitions)
    timings: dict[tuple[str, int, int], list[float]] = {}
    for batch in batches:
        cells = []
        for frames in t_values:
            for module, fn, inner in _module_plan(frames, batch, channels,
                                                  spatial, reduction, desc_width):
                cells.append((module, frames, fn, inner))
                timings[(module, frames, batch)] = []
        for _, _, fn, _ in cells:
            for _ in range(warmup):
                fn()
        # Collection pauses would swamp microsecond-scale cells.
        gc_was_on = gc.isenabled()
        gc.disable()
        try:
            for _ in range(repetitions):
                for module, frames, fn, inner in cells:
                    t0 = time.perf_counter()
                    for _ in range(inner):
                        fn()
                    elapsed = (time.perf_counter() - t0) * 1000.0 / inner
                    timings[(module, frames, batch)].append(elapsed)
        finally:
            if gc_was_on:
                gc.enable()
    for frames in t_values:
        for batch in batches:
            for module in MODULES:
                report.entries.append(BenchEntry(
                    module=module, frames=frames, batch=batch,
                    timings_ms=timings[(module, frames, batch)]))
    if out_csv is not None:
        Path(out_csv).write_text(report.to_csv())
    return report
