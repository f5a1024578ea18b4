"""Ablation and reduction-factor sweeps over the synthetic task."""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import numpy as np

from ..blocks import estimate_macs
from ..errors import ConfigError
from ..synthdata import SynthConfig
from .train import (TrainConfig, VARIANTS, train, variant_network_config)

ABLATION_HEADER = "variant,seed,top1,top5,top1_std,top5_std"
SWEEP_HEADER = "r,seed,top1,top5,total_macs,cme_macs"


def run_ablation(tcfg: TrainConfig, dcfg: SynthConfig, out_dir: str | Path,
                 variants: tuple[str, ...] = VARIANTS,
                 seeds: tuple[int, ...] = (0, 1, 2)) -> list[dict]:
    """Train every variant x seed; returns rows and writes ablation.csv.

    The CSV holds one data row per run (std columns empty) plus one
    summary row per variant with seed="summary", the across-seed means in
    top1/top5, and population standard deviations in the _std columns.
    """
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows: list[dict] = []
    for variant in variants:
        for seed in seeds:
            run_cfg = replace(tcfg, seed=seed, variant=variant)
            ncfg = variant_network_config(variant, dcfg)
            run_dir = out / f"{_slug(variant)}_s{seed}"
            metrics, _ = train(run_cfg, ncfg, dcfg, run_dir)
            rows.append({"variant": variant, "seed": seed,
                         "top1": metrics.final_top1, "top5": metrics.final_top5})
    lines = [ABLATION_HEADER]
    for r in rows:
        lines.append(f"{r['variant']},{r['seed']},{r['top1']!r},{r['top5']!r},,")
    for variant in variants:
        t1 = np.array([r["top1"] for r in rows if r["variant"] == variant])
        t5 = np.array([r["top5"] for r in rows if r["variant"] == variant])
        lines.append(f"{variant},summary,{t1.mean()!r},{t5.mean()!r},{t1.std()!r},{t5.std()!r}")
    (out / "ablation.csv").write_text("\n".join(lines) + "\n")
    return rows


def summarize_ablation(rows: list[dict]) -> dict[str, dict[str, float]]:
    """variant -> {top1_mean, top1_std, top5_mean, top5_std}."""
    out = {}
    for variant in {r["variant"] for r in rows}:
        t1 = np.array([r["top1"] for r in rows if r["variant"] == variant])
        t5 = np.array([r["top5"] for r in rows if r["variant"] == variant])
        out[variant] = {"top1_mean": float(t1.mean()), "top1_std": float(t1.std()),
                        "top5_mean": float(t5.mean()), "top5_std": float(t5.std())}
    return out


def run_reduction_sweep(tcfg: TrainConfig, dcfg: SynthConfig, out_dir: str | Path,
                        rs: tuple[int, ...] = (1, 4, 8),
                        seeds: tuple[int, ...] = (0,)) -> list[dict]:
    """Accuracy/MAC table across descriptor reduction factors r1 = r2 = r."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows: list[dict] = []
    for r in rs:
        ncfg = variant_network_config("+CME&SME", dcfg, r1=r, r2=r)
        macs = estimate_macs(ncfg, input_hw=(dcfg.image_size, dcfg.image_size))
        cme_macs = sum(b["cme"] for b in macs["blocks"])
        for seed in seeds:
            run_cfg = replace(tcfg, seed=seed, variant="+CME&SME")
            metrics, _ = train(run_cfg, ncfg, dcfg, out / f"r{r}_s{seed}")
            rows.append({"r": r, "seed": seed, "top1": metrics.final_top1,
                         "top5": metrics.final_top5, "total_macs": macs["total"],
                         "cme_macs": cme_macs})
    lines = [SWEEP_HEADER]
    for row in rows:
        lines.append(f"{row['r']},{row['seed']},{row['top1']!r},{row['top5']!r},"
                     f"{row['total_macs']},{row['cme_macs']}")
    (out / "reduction_sweep.csv").write_text("\n".join(lines) + "\n")
    return rows


def _slug(variant: str) -> str:
    return variant.replace("+", "plus_").replace("&", "_and_").lower()
