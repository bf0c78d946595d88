"""Desk-scale two-stage frequency-aware camouflaged object segmentation."""

from .tensor import Tensor, backward
from .params import ParamStore, adam_step
from .model import FPNet, FPNetConfig, ablation_config
from .metrics import MetricReport, compute_report, evaluate_dataset
from .data import SynthSpec, gen_dataset

__version__ = "0.1.0"

__all__ = [
    "Tensor", "backward", "ParamStore", "adam_step",
    "FPNet", "FPNetConfig", "ablation_config",
    "MetricReport", "compute_report", "evaluate_dataset",
    "SynthSpec", "gen_dataset",
    "__version__",
]
