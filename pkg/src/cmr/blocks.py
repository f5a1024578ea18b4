"""Residual video blocks and the tiny clip-classification network.

Two block flavors wrap a standard 1x1 / 3x3 / 1x1 bottleneck:

* Block A: y = relu(residual(x) + bottleneck(tim(cme(x))))
* Block B: sme(block A)

Channel enhancement (cme) and temporal mixing (tim) sit on the main path
before the bottleneck; the residual branches off the raw block input and
is projected (strided 1x1 conv + BN) when the shape changes. Per stage,
the first block is a Block B and the rest are Block A, so spatial
enhancement runs once per stage while channel enhancement runs in every
block. The stem is a 3x3 conv + BN + ReLU; the head global-averages over
(T, H, W) and applies a linear classifier.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cme import CmeParams, cme_forward
from .errors import ConfigError, ContractError, DimensionError
from .sme import SmeParams, sme_forward
from .tensor import serial
from .tensor.core import Tensor, mean_axes, require_clip
from .tensor.ops import (BatchNormState, batch_norm, conv2d_3x3,
                         linear_lastdim, pointwise_linear, relu,
                         spatial_subsample)
from .tensor.rng import kaiming_tensor, stream
from .tim import TimParams, tim_forward

CME_PLACEMENTS = ("all", "first", "none")
SME_PLACEMENTS = ("first", "none")


@dataclass
class NetworkConfig:
    """Shape of the network: stages of (block count, channel width).

    Placement flags support the ablation variants: cme in all blocks, the
    first block per stage, or nowhere; sme in the first block per stage or
    nowhere; tim togglable. Defaults are the full model.
    """

    stages: tuple[tuple[int, int], ...] = ((2, 16), (2, 32))
    input_channels: int = 1
    classes: int = 8
    r1: int = 8
    r2: int = 8
    frames: int = 8
    cme_placement: str = "all"
    sme_placement: str = "first"
    with_tim: bool = True
    # Downsampling stem: halves the 32x32 input before stage 0, following
    # the usual residual-network pattern of an early spatial reduction.
    stem_stride: int = 2

    def __post_init__(self):
        self.stages = tuple((int(n), int(w)) for n, w in self.stages)
        if not self.stages:
            raise ConfigError("network needs at least one stage")
        for n, w in self.stages:
            if n < 1:
                raise ConfigError(f"every stage needs at least one block, got {n}")
            if w < 4:
                raise ConfigError(f"stage width must be at least 4, got {w}")
            if w % self.r1 != 0:
                raise ConfigError(f"stage width {w} is not divisible by r1={self.r1}")
        if self.r1 != self.r2:
            raise ConfigError(f"reduction factors must match, got r1={self.r1}, r2={self.r2}")
        if self.classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.classes}")
        if self.frames < 1:
            raise ConfigError(f"need at least 1 frame, got {self.frames}")
        if self.input_channels < 1:
            raise ConfigError(f"need at least 1 input channel, got {self.input_channels}")
        if self.cme_placement not in CME_PLACEMENTS:
            raise ConfigError(f"cme_placement must be one of {CME_PLACEMENTS}")
        if self.sme_placement not in SME_PLACEMENTS:
            raise ConfigError(f"sme_placement must be one of {SME_PLACEMENTS}")
        if self.stem_stride not in (1, 2):
            raise ConfigError(f"stem_stride must be 1 or 2, got {self.stem_stride}")


@dataclass
class BlockParams:
    """One residual block. sme present <=> this is a Block B."""

    stride: int
    cme: CmeParams | None
    tim: TimParams | None
    conv1_w: Tensor
    bn1: BatchNormState
    conv2_w: Tensor
    bn2: BatchNormState
    conv3_w: Tensor
    bn3: BatchNormState
    sme: SmeParams | None = None
    proj_w: Tensor | None = None
    proj_bn: BatchNormState | None = None


@dataclass
class NetParams:
    config: NetworkConfig
    stem_w: Tensor
    stem_bn: BatchNormState
    stages: list[list[BlockParams]]
    head_w: Tensor
    head_b: Tensor


def _block_core(x: Tensor, p: BlockParams, capture: dict | None = None) -> Tensor:
    h = x
    if p.cme is not None:
        h = cme_forward(h, p.cme, capture=capture)
    if p.tim is not None:
        h = tim_forward(h, p.tim)
    b = relu(batch_norm(pointwise_linear(h, p.conv1_w), p.bn1))
    b = relu(batch_norm(conv2d_3x3(b, p.conv2_w, stride=p.stride), p.bn2))
    b = batch_norm(pointwise_linear(b, p.conv3_w), p.bn3)
    if p.proj_w is None:
        r = x
    else:
        xs = spatial_subsample(x, p.stride) if p.stride > 1 else x
        r = batch_norm(pointwise_linear(xs, p.proj_w), p.proj_bn)
    return relu(b + r)


def block_a_forward(x: Tensor, p: BlockParams) -> Tensor:
    """Bottleneck block with channel/temporal enhancement on the main path."""
    if p.sme is not None:
        raise ContractError("block A carries no SME; use block_b_forward")
    return _block_core(x, p)


def block_b_forward(x: Tensor, p: BlockParams, capture: dict | None = None) -> Tensor:
    """Block A followed by spatial motion enhancement on its output."""
    if p.sme is None:
        raise ContractError("block B requires SME parameters")
    if capture is not None:
        capture["block_input"] = x
    return sme_forward(_block_core(x, p, capture), p.sme, capture)


def build_network(cfg: NetworkConfig, seed: int = 0) -> NetParams:
    """Initialize all parameters for the configured network.

    Initialization is deterministic in (cfg, seed); each tensor draws
    from its own keyed stream, so unrelated config edits do not shift
    other tensors' values.
    """
    w0 = cfg.stages[0][1]
    stem_w = kaiming_tensor(stream(seed, 1), (w0, cfg.input_channels, 3, 3),
                            fan_in=cfg.input_channels * 9)
    stages: list[list[BlockParams]] = []
    in_ch = w0
    for si, (count, width) in enumerate(cfg.stages):
        blocks: list[BlockParams] = []
        for bi in range(count):
            stride = 2 if si > 0 and bi == 0 else 1
            mid = max(width // 4, 1)
            use_cme = cfg.cme_placement == "all" or (cfg.cme_placement == "first" and bi == 0)
            use_sme = cfg.sme_placement == "first" and bi == 0
            rng = stream(seed, 2, si, bi)
            needs_proj = stride != 1 or in_ch != width
            blocks.append(BlockParams(
                stride=stride,
                cme=CmeParams.init(in_ch, cfg.r1, cfg.r2, seed=seed, key=(si, bi))
                if use_cme else None,
                tim=TimParams.init(in_ch) if cfg.with_tim else None,
                conv1_w=kaiming_tensor(rng, (mid, in_ch), fan_in=in_ch),
                bn1=BatchNormState.init(mid),
                conv2_w=kaiming_tensor(rng, (mid, mid, 3, 3), fan_in=mid * 9),
                bn2=BatchNormState.init(mid),
                conv3_w=kaiming_tensor(rng, (width, mid), fan_in=mid),
                bn3=BatchNormState.init(width),
                sme=SmeParams.init(width, seed=seed, key=(si,)) if use_sme else None,
                proj_w=kaiming_tensor(rng, (width, in_ch), fan_in=in_ch) if needs_proj else None,
                proj_bn=BatchNormState.init(width) if needs_proj else None,
            ))
            in_ch = width
        stages.append(blocks)
    head_rng = stream(seed, 3)
    return NetParams(
        config=cfg,
        stem_w=stem_w,
        stem_bn=BatchNormState.init(w0),
        stages=stages,
        head_w=kaiming_tensor(head_rng, (cfg.classes, in_ch), fan_in=in_ch),
        head_b=Tensor(np.zeros(cfg.classes), requires_grad=True),
    )


def network_forward(x: Tensor, net: NetParams, capture: dict | None = None) -> Tensor:
    """Clip batch [N,T,Cin,H,W] -> logits [N, classes].

    When ``capture`` is a dict, the first Block B's input features, gate
    vectors, and spatial motion weights are stored into it.
    """
    require_clip(x, "network_forward")
    cfg = net.config
    if x.shape[2] != cfg.input_channels:
        raise DimensionError(f"network_forward: input has {x.shape[2]} channels, config expects {cfg.input_channels}")
    if x.shape[3] < 8 or x.shape[4] < 8:
        raise ContractError(f"network_forward: input spatial size must be at least 8x8, got {x.shape[3]}x{x.shape[4]}")
    h = relu(batch_norm(conv2d_3x3(x, net.stem_w, stride=net.config.stem_stride),
                        net.stem_bn))
    first_b = capture
    for blocks in net.stages:
        for p in blocks:
            if p.sme is not None:
                h = block_b_forward(h, p, capture=first_b)
                first_b = None
            else:
                h = block_a_forward(h, p)
    pooled = mean_axes(h, (1, 3, 4))
    return linear_lastdim(pooled, net.head_w, net.head_b)


def set_training(net: NetParams, training: bool) -> None:
    """Flip every batch-norm state between batch and running statistics."""
    for bn in _bn_states(net):
        bn.training = training


def _bn_states(net: NetParams):
    yield net.stem_bn
    for blocks in net.stages:
        for p in blocks:
            yield p.bn1
            yield p.bn2
            yield p.bn3
            if p.proj_bn is not None:
                yield p.proj_bn
            if p.sme is not None:
                yield p.sme.bn


def _bn_params(prefix: str, bn: BatchNormState) -> dict[str, Tensor]:
    return {f"{prefix}.gamma": bn.gamma, f"{prefix}.beta": bn.beta}


def _bn_buffers(prefix: str, bn: BatchNormState) -> dict[str, np.ndarray]:
    return {
        f"{prefix}.run_mean": bn.running_mean,
        f"{prefix}.run_var": bn.running_var,
        f"{prefix}.num_batches": np.array([float(bn.batches_tracked)]),
    }


def named_parameters(net: NetParams) -> dict[str, Tensor]:
    """Trainable tensors by checkpoint name, in deterministic order."""
    out: dict[str, Tensor] = {"stem.conv.w": net.stem_w}
    out.update(_bn_params("stem.bn", net.stem_bn))
    for si, blocks in enumerate(net.stages):
        for bi, p in enumerate(blocks):
            if p.cme is not None:
                c = p.cme
                out.update({f"cme.{si}.{bi}.{n}": getattr(c, n)
                            for n in ("w1", "b1", "w2", "b2", "w3", "b3")})
            if p.tim is not None:
                out[f"tim.{si}.{bi}.wt"] = p.tim.wt
            base = f"block.{si}.{bi}"
            out[f"{base}.conv1.w"] = p.conv1_w
            out.update(_bn_params(f"{base}.bn1", p.bn1))
            out[f"{base}.conv2.w"] = p.conv2_w
            out.update(_bn_params(f"{base}.bn2", p.bn2))
            out[f"{base}.conv3.w"] = p.conv3_w
            out.update(_bn_params(f"{base}.bn3", p.bn3))
            if p.proj_w is not None:
                out[f"{base}.proj.w"] = p.proj_w
                out.update(_bn_params(f"{base}.proj_bn", p.proj_bn))
            if p.sme is not None:
                out[f"sme.{si}.wc"] = p.sme.wc
                out[f"sme.{si}.gamma"] = p.sme.bn.gamma
                out[f"sme.{si}.beta"] = p.sme.bn.beta
    out["head.w"] = net.head_w
    out["head.b"] = net.head_b
    return out


def named_buffers(net: NetParams) -> dict[str, np.ndarray]:
    """Non-trainable batch-norm buffers by checkpoint name."""
    out: dict[str, np.ndarray] = {}
    out.update(_bn_buffers("stem.bn", net.stem_bn))
    for si, blocks in enumerate(net.stages):
        for bi, p in enumerate(blocks):
            base = f"block.{si}.{bi}"
            out.update(_bn_buffers(f"{base}.bn1", p.bn1))
            out.update(_bn_buffers(f"{base}.bn2", p.bn2))
            out.update(_bn_buffers(f"{base}.bn3", p.bn3))
            if p.proj_bn is not None:
                out.update(_bn_buffers(f"{base}.proj_bn", p.proj_bn))
            if p.sme is not None:
                out.update({f"sme.{si}.run_mean": p.sme.bn.running_mean,
                            f"sme.{si}.run_var": p.sme.bn.running_var,
                            f"sme.{si}.num_batches": np.array([float(p.sme.bn.batches_tracked)])})
    return out


def _bn_by_buffer_prefix(net: NetParams) -> dict[str, BatchNormState]:
    out = {"stem.bn": net.stem_bn}
    for si, blocks in enumerate(net.stages):
        for bi, p in enumerate(blocks):
            base = f"block.{si}.{bi}"
            out[f"{base}.bn1"] = p.bn1
            out[f"{base}.bn2"] = p.bn2
            out[f"{base}.bn3"] = p.bn3
            if p.proj_bn is not None:
                out[f"{base}.proj_bn"] = p.proj_bn
            if p.sme is not None:
                out[f"sme.{si}"] = p.sme.bn
    return out


def save_network(path: str | Path, net: NetParams) -> None:
    """Write every parameter and buffer plus the config as one checkpoint."""
    tensors = {name: t.data for name, t in named_parameters(net).items()}
    tensors.update(named_buffers(net))
    cfg = net.config
    meta = {
        "format": 1,
        "network": {
            "stages": [list(s) for s in cfg.stages],
            "input_channels": cfg.input_channels,
            "classes": cfg.classes,
            "r1": cfg.r1,
            "r2": cfg.r2,
            "frames": cfg.frames,
            "cme_placement": cfg.cme_placement,
            "sme_placement": cfg.sme_placement,
            "with_tim": cfg.with_tim,
            "stem_stride": cfg.stem_stride,
        },
    }
    serial.save_checkpoint(path, tensors, meta)


def load_network(path: str | Path) -> NetParams:
    """Rebuild a network from a checkpoint written by save_network."""
    tensors, meta = serial.load_checkpoint(path)
    spec = dict(meta["network"])
    spec["stages"] = tuple(tuple(s) for s in spec["stages"])
    cfg = NetworkConfig(**spec)
    net = build_network(cfg, seed=0)
    for name, t in named_parameters(net).items():
        if name not in tensors:
            raise ConfigError(f"checkpoint is missing parameter {name!r}")
        val = tensors[name]
        if val.shape != t.data.shape:
            raise ConfigError(f"checkpoint entry {name!r} has shape {val.shape}, expected {t.data.shape}")
        t.data[...] = val
    for prefix, bn in _bn_by_buffer_prefix(net).items():
        # Buffers follow the freshly built parameters' dtype, not the
        # container's (which always stores float64).
        dt = bn.gamma.data.dtype
        bn.running_mean = tensors[f"{prefix}.run_mean"].astype(dt)
        bn.running_var = tensors[f"{prefix}.run_var"].astype(dt)
        bn.batches_tracked = int(tensors[f"{prefix}.num_batches"][0])
    return net


def transfer_parameters(src: NetParams, dst: NetParams) -> list[str]:
    """Copy identically named parameters/buffers from src to dst.

    Returns the copied names. Entries present on only one side (e.g.
    enhancement modules absent from a control network) are skipped.
    """
    copied = []
    dst_params = named_parameters(dst)
    for name, t in named_parameters(src).items():
        if name in dst_params and dst_params[name].shape == t.shape:
            dst_params[name].data[...] = t.data
            copied.append(name)
    src_bns = _bn_by_buffer_prefix(src)
    for prefix, bn in _bn_by_buffer_prefix(dst).items():
        if prefix in src_bns:
            bn.running_mean = src_bns[prefix].running_mean.copy()
            bn.running_var = src_bns[prefix].running_var.copy()
            bn.batches_tracked = src_bns[prefix].batches_tracked
            copied.append(f"{prefix}.buffers")
    return copied


def neutralize(net: NetParams) -> None:
    """Force every enhancement module to the identity, in place.

    Gates are saturated to 1 (w3 = 0, b3 = +40, so sigmoid rounds to 1.0
    in float64), temporal kernels become [0, 1, 0], and SME branch BNs
    get gamma = 0. The network then computes exactly what a plain 2-D
    bottleneck classifier with the same shared weights computes.
    """
    for blocks in net.stages:
        for p in blocks:
            if p.cme is not None:
                p.cme.w3.data[...] = 0.0
                p.cme.b3.data[...] = 40.0
            if p.tim is not None:
                p.tim.wt.data[...] = 0.0
                p.tim.wt.data[:, p.tim.taps // 2] = 1.0
            if p.sme is not None:
                p.sme.bn.gamma.data[...] = 0.0


def parameter_count(net: NetParams) -> int:
    return sum(t.size for t in named_parameters(net).values())


def estimate_macs(cfg: NetworkConfig, input_hw: tuple[int, int] = (32, 32)) -> dict:
    """Closed-form multiply-accumulate counts per block and total, N = 1.

    Conventions: convolutions and linear maps count fan_in multiplies per
    output element; the discrepancy/fusion stages count T^2 * C' each;
    gate and motion-weight applications count one multiply per element;
    batch norm counts one (prefolded scale); pooling, softmax, sigmoid,
    and additions are not counted.
    """
    t = cfg.frames
    h, w = input_hw
    report: dict = {"blocks": []}
    w0 = cfg.stages[0][1]
    if cfg.stem_stride == 2:
        h, w = (h + 1) // 2, (w + 1) // 2
    report["stem"] = t * h * w * 9 * cfg.input_channels * w0 + t * h * w * w0
    in_ch = w0
    total = report["stem"]
    for si, (count, width) in enumerate(cfg.stages):
        for bi in range(count):
            stride = 2 if si > 0 and bi == 0 else 1
            ho, wo = ((h + 1) // 2, (w + 1) // 2) if stride == 2 else (h, w)
            mid = max(width // 4, 1)
            use_cme = cfg.cme_placement == "all" or (cfg.cme_placement == "first" and bi == 0)
            use_sme = cfg.sme_placement == "first" and bi == 0
            c1 = in_ch // cfg.r1
            c2 = in_ch // cfg.r2
            cme = (t * in_ch * c1 + t * in_ch * c2 + t * t * c2 + t * t * c1
                   + t * c1 * in_ch + t * h * w * in_ch) if use_cme else 0
            tim = t * h * w * in_ch * 3 if cfg.with_tim else 0
            bottleneck = (t * h * w * mid * (in_ch + 1)
                          + t * ho * wo * mid * (9 * mid + 1)
                          + t * ho * wo * width * (mid + 1))
            projection = t * ho * wo * width * (in_ch + 1) if (stride != 1 or in_ch != width) else 0
            sme = ((t - 1) * ho * wo * 3 * width + t * ho * wo * width
                   + t * ho * wo * width * width + t * ho * wo * width) if use_sme else 0
            entry = {"stage": si, "block": bi, "cme": cme, "tim": tim,
                     "bottleneck": bottleneck, "projection": projection, "sme": sme}
            entry["total"] = cme + tim + bottleneck + projection + sme
            report["blocks"].append(entry)
            total += entry["total"]
            in_ch = width
            h, w = ho, wo
    report["head"] = in_ch * cfg.classes
    total += report["head"]
    report["total"] = total
    return report
