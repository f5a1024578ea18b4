"""Command line front end.

Subcommands: train, eval, ablate, bench, viz, selftest. A JSON config
file (``--config``) may carry "data", "network" and "train" sections
whose keys mirror SynthConfig, the network shape (stages/r1/r2) and
TrainConfig; individual flags override the file. Usage and configuration
errors exit with status 2, failed checks with status 1.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..errors import CmrError, ConfigError
from ..synthdata import SynthConfig
from .ablate import run_ablation, run_reduction_sweep
from .bench import benchmark
from .selftest import run_selftest
from .train import (TrainConfig, VARIANTS, evaluate, train,
                    variant_network_config)
from .viz import export_heatmaps

DEFAULT_STAGES = ((2, 16), (2, 32))


def _read_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"malformed JSON in {path} at line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(cfg) - {"data", "network", "train"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    return cfg


def _section(cfg: dict, name: str) -> dict:
    sec = cfg.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"config section {name!r} must be a JSON object")
    return dict(sec)


def _make(cls, kwargs: dict, name: str):
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad {name} section: {exc}") from exc


def _data_config(cfg: dict, args) -> SynthConfig:
    kwargs = _section(cfg, "data")
    if getattr(args, "seed", None) is not None:
        kwargs["seed"] = args.seed
    if getattr(args, "frames", None) is not None:
        kwargs["frames"] = args.frames
    return _make(SynthConfig, kwargs, "data")


def _train_config(cfg: dict, args) -> TrainConfig:
    kwargs = _section(cfg, "train")
    if getattr(args, "seed", None) is not None:
        kwargs["seed"] = args.seed
    if getattr(args, "variant", None) is not None:
        kwargs["variant"] = args.variant
    if getattr(args, "epochs", None) is not None:
        kwargs["epochs"] = args.epochs
    return _make(TrainConfig, kwargs, "train")


def _network_shape(cfg: dict) -> tuple[tuple[tuple[int, int], ...], int, int]:
    sec = _section(cfg, "network")
    unknown = set(sec) - {"stages", "r1", "r2"}
    if unknown:
        raise ConfigError(f"unknown network keys: {sorted(unknown)}")
    raw = sec.get("stages", DEFAULT_STAGES)
    try:
        stages = tuple((int(n), int(w)) for n, w in raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"network stages must be [blocks, width] pairs: {raw!r}") from exc
    return stages, int(sec.get("r1", 8)), int(sec.get("r2", 8))


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from exc


def cmd_train(args) -> int:
    cfg = _read_config(args.config)
    dcfg = _data_config(cfg, args)
    tcfg = _train_config(cfg, args)
    stages, r1, r2 = _network_shape(cfg)
    ncfg = variant_network_config(tcfg.variant, dcfg, stages=stages, r1=r1, r2=r2)
    metrics, ckpt = train(tcfg, ncfg, dcfg, args.out)
    print(f"checkpoint: {ckpt}")
    print(f"metrics:    {Path(args.out) / 'metrics.csv'}")
    print(f"final val top1={metrics.final_top1:.4f} top5={metrics.final_top5:.4f}")
    return 0


def cmd_eval(args) -> int:
    cfg = _read_config(args.config)
    dcfg = _data_config(cfg, args)
    metrics = evaluate(args.checkpoint, dcfg, clips_per_video=args.clips,
                       out_csv=args.out)
    print(f"val top1={metrics.final_top1:.4f} top5={metrics.final_top5:.4f} "
          f"loss={metrics.rows[-1].loss:.4f}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _read_config(args.config)
    dcfg = _data_config(cfg, args)
    tcfg = _train_config(cfg, args)
    base = tcfg.seed
    seeds = tuple(base + i for i in range(args.runs))
    if args.sweep:
        rows = run_reduction_sweep(tcfg, dcfg, args.out, seeds=seeds)
        print(f"wrote {Path(args.out) / 'reduction_sweep.csv'} ({len(rows)} rows)")
    else:
        rows = run_ablation(tcfg, dcfg, args.out, seeds=seeds)
        print(f"wrote {Path(args.out) / 'ablation.csv'} ({len(rows)} data rows)")
    return 0


def cmd_bench(args) -> int:
    t_values = _int_list(args.frames) if args.frames else (4, 8, 16)
    report = benchmark(t_values=t_values, repetitions=args.repetitions,
                       warmup=args.warmup, out_csv=args.out)
    print(report.to_csv(), end="")
    if args.out:
        print(f"wrote {args.out}", file=sys.stderr)
    return 0


def cmd_viz(args) -> int:
    cfg = _read_config(args.config)
    dcfg = _data_config(cfg, args)
    index = args.index if args.index is not None else dcfg.train_size
    paths, warnings = export_heatmaps(args.checkpoint, dcfg, index, args.out)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"wrote {len(paths)} heatmaps to {args.out}")
    return 0


def cmd_selftest(args) -> int:
    return 0 if run_selftest() else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cmr", description="Motion-enhanced residual video network toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, seed=True, config=True, frames=False):
        if config:
            p.add_argument("--config", help="JSON config file")
        if seed:
            p.add_argument("--seed", type=int, help="base random seed")
        if frames:
            p.add_argument("--frames", type=int, help="sampled frames per clip")

    p = sub.add_parser("train", help="train one variant on synthetic clips")
    common(p, frames=True)
    p.add_argument("--variant", choices=VARIANTS, help="network variant")
    p.add_argument("--epochs", type=int, help="training epochs")
    p.add_argument("--out", default="runs/train", help="output directory")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on the validation split")
    p.add_argument("checkpoint", help="checkpoint file")
    common(p, frames=True)
    p.add_argument("--clips", type=int, default=1,
                   help="sampled clips per video, scores averaged")
    p.add_argument("--out", help="write metrics CSV here")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="variant x seed ablation table")
    common(p)
    p.add_argument("--epochs", type=int, help="training epochs per run")
    p.add_argument("--runs", type=int, default=3, help="seeds per variant")
    p.add_argument("--sweep", action="store_true",
                   help="sweep descriptor reduction r instead of variants")
    p.add_argument("--out", default="runs/ablation", help="output directory")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("bench", help="micro-benchmark the modules")
    p.add_argument("--frames", help="comma-separated T values (default 4,8,16)")
    p.add_argument("--repetitions", type=int, default=9, help="timed repetitions")
    p.add_argument("--warmup", type=int, default=3, help="untimed warmup calls")
    p.add_argument("--out", help="write timing CSV here")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("viz", help="export gate and motion-weight heatmaps")
    p.add_argument("checkpoint", help="checkpoint file")
    common(p, frames=True)
    p.add_argument("--index", type=int,
                   help="clip index (default: first validation clip)")
    p.add_argument("--out", default="runs/viz", help="output directory")
    p.set_defaults(fn=cmd_viz)

    p = sub.add_parser("selftest", help="run the built-in sanity checks")
    p.set_defaults(fn=cmd_selftest)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CmrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
