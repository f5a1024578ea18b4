"""Motion-enhanced residual video networks on a small numpy autodiff core.

Layout:
  tensor     5-D clip tensors, reverse-mode autodiff, numeric layers, I/O
  cme        channel-wise gating from cross-frame descriptor discrepancies
  sme        spatial re-weighting from frame-to-frame feature similarity
  tim        depthwise temporal convolution
  blocks     residual bottleneck blocks and whole-network assembly
  synthdata  deterministic moving-square clip generator
  harness    training loop, ablations, benchmarks, heatmaps, CLI
"""

from . import blocks, cme, sme, synthdata, tim
from .blocks import (NetworkConfig, build_network, estimate_macs, load_network,
                     named_buffers, named_parameters, network_forward,
                     neutralize, parameter_count, save_network, set_training,
                     transfer_parameters)
from .cme import CmeParams, cme_forward, cme_forward_naive, discrepancy
from .errors import (CmrError, ConfigError, ContractError, DimensionError,
                     NumericError, UninitializedStatsError)
from .sme import SmeParams, pointwise_cosine, sme_forward, sme_forward_naive
from .synthdata import SynthConfig, batch_clips, generate_clip, motion_mask
from .tensor import Tape, Tensor, backward, grad_check
from .tim import TimParams, tim_forward

__version__ = "0.1.0"

__all__ = [
    "blocks", "cme", "sme", "synthdata", "tim",
    "NetworkConfig", "build_network", "estimate_macs", "load_network",
    "named_buffers", "named_parameters", "network_forward", "neutralize",
    "parameter_count", "save_network", "set_training", "transfer_parameters",
    "CmeParams", "cme_forward", "cme_forward_naive", "discrepancy",
    "CmrError", "ConfigError", "ContractError", "DimensionError",
    "NumericError", "UninitializedStatsError",
    "SmeParams", "pointwise_cosine", "sme_forward", "sme_forward_naive",
    "SynthConfig", "batch_clips", "generate_clip", "motion_mask",
    "Tape", "Tensor", "backward", "grad_check",
    "TimParams", "tim_forward",
    "__version__",
]
