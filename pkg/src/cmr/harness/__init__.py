"""Training, evaluation, ablation, benchmarking and visualization tools."""

from .ablate import (ABLATION_HEADER, SWEEP_HEADER, run_ablation,
                     run_reduction_sweep, summarize_ablation)
from .bench import BenchEntry, BenchReport, benchmark
from .cli import main
from .selftest import run_selftest
from .train import (CSV_HEADER, EpochRow, RunMetrics, TrainConfig, VARIANTS,
                    csv_rows_excluding_seconds, evaluate, topk_hits, train,
                    variant_network_config)
from .viz import (export_heatmaps, gate_group_maps, mask_mass_fraction,
                  normalize_heatmap, read_pgm, write_pgm)

__all__ = [
    "ABLATION_HEADER", "SWEEP_HEADER", "run_ablation", "run_reduction_sweep",
    "summarize_ablation", "BenchEntry", "BenchReport", "benchmark", "main",
    "run_selftest", "CSV_HEADER", "EpochRow", "RunMetrics", "TrainConfig",
    "VARIANTS", "csv_rows_excluding_seconds", "evaluate", "topk_hits", "train",
    "variant_network_config", "export_heatmaps", "gate_group_maps",
    "mask_mass_fraction", "normalize_heatmap", "read_pgm", "write_pgm",
]
