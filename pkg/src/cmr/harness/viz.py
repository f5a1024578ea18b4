"""Heatmap export: which channels the gates favor and where motion lands.

For one validation clip, the first Block B's input features are grouped
into the ten highest-gated and ten lowest-gated channels per frame (the
group shrinks to C/2 with a warning when fewer than ten channels exist),
averaged into single maps, and written as binary PGM images alongside
the block's spatial motion-weight map (1 - similarity).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..blocks import load_network, network_forward, set_training
from ..errors import ContractError
from ..synthdata import SynthConfig, generate_clip
from ..tensor.core import Tensor

GROUP = 10


def normalize_heatmap(arr: np.ndarray) -> np.ndarray:
    """Min-max scale to uint8; degenerate (range < 1e-12) maps go all-zero."""
    lo = float(arr.min())
    hi = float(arr.max())
    if hi - lo < 1e-12:
        return np.zeros(arr.shape, dtype=np.uint8)
    return np.round((arr - lo) * (255.0 / (hi - lo))).astype(np.uint8)


def write_pgm(path: str | Path, img: np.ndarray) -> None:
    """Binary (P5) grayscale PGM, 8 bits per pixel."""
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ContractError(f"write_pgm needs a 2-D uint8 image, got {img.dtype} {img.shape}")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ContractError(f"{path} is not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8, count=h * w).reshape(h, w)


def capture_maps(net, clip: Tensor) -> dict:
    """Forward one clip collecting the first Block B's inspection tensors."""
    set_training(net, False)
    capture: dict = {}
    network_forward(clip, net, capture=capture)
    if "gate" not in capture and "sme_weight" not in capture:
        raise ContractError("network has no Block B (or CME) to visualize")
    return capture


def gate_group_maps(features: np.ndarray, gates: np.ndarray,
                    group: int = GROUP) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Average the top/bottom gated channels per frame: ([T,H,W], [T,H,W]).

    features: [T,C,H,W]; gates: [T,C]. Channels are ranked by gate value
    per frame; groups of ``group`` channels are averaged. With C < 2
    usable groups the group size shrinks to C // 2 and a warning string
    is returned.
    """
    t, c = gates.shape
    warnings = []
    g = group
    if c < group:
        g = max(c // 2, 1)
        warnings.append(f"only {c} channels; shrinking top/bottom groups to {g}")
    top = np.empty((t,) + features.shape[2:])
    bot = np.empty_like(top)
    for ti in range(t):
        order = np.argsort(-gates[ti], kind="stable")
        top[ti] = features[ti, order[:g]].mean(axis=0)
        bot[ti] = features[ti, order[-g:]].mean(axis=0)
    return top, bot, warnings


def export_heatmaps(checkpoint: str | Path, dcfg: SynthConfig, index: int,
                    out_dir: str | Path) -> tuple[list[Path], list[str]]:
    """Write per-frame PGMs for one clip: {frame:02}_{top10|bot10|sme}.pgm."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    net = load_network(checkpoint)
    lc = generate_clip(dcfg, index)
    capture = capture_maps(net, lc.clip)
    paths: list[Path] = []
    warnings: list[str] = []

    if "gate" in capture:
        feats = capture["block_input"].data[0]  # [T,C,H,W]
        gates = capture["gate"].data[0]         # [T,C]
        top, bot, warn = gate_group_maps(feats, gates)
        warnings.extend(warn)
        for ti in range(top.shape[0]):
            p = out / f"{ti:02}_top10.pgm"
            write_pgm(p, normalize_heatmap(top[ti]))
            paths.append(p)
            p = out / f"{ti:02}_bot10.pgm"
            write_pgm(p, normalize_heatmap(bot[ti]))
            paths.append(p)
    if "sme_weight" in capture:
        weight = capture["sme_weight"].data[0]  # [T,H,W]
        for ti in range(weight.shape[0]):
            p = out / f"{ti:02}_sme.pgm"
            write_pgm(p, normalize_heatmap(weight[ti]))
            paths.append(p)
    return paths, warnings


def mask_mass_fraction(maps: np.ndarray, mask: np.ndarray) -> float:
    """Share of the maps' total (non-negative) mass inside the mask."""
    if maps.shape != mask.shape:
        raise ContractError(f"maps {maps.shape} and mask {mask.shape} must align")
    total = float(maps.sum())
    if total <= 0:
        return 0.0
    return float(maps[mask].sum() / total)
