"""Recurrent-perceptron channel-attention encoder for hybrid residual modeling."""

__version__ = "0.1.0"

from .data import Dataset, load_csv, save_csv, to_pid, to_psd, unsort_predictions  # noqa: E402
from .metrics import MetricsReport, full_report, mir  # noqa: E402
from .model import RPCATE, HyperParams, build_ablation, load_checkpoint, model_forward, save_checkpoint  # noqa: E402
from .synthetic import GenConfig, generate  # noqa: E402
from .training import evaluate, grid_search, train  # noqa: E402

__all__ = [
    "Dataset",
    "GenConfig",
    "HyperParams",
    "MetricsReport",
    "RPCATE",
    "build_ablation",
    "evaluate",
    "full_report",
    "generate",
    "grid_search",
    "load_checkpoint",
    "load_csv",
    "mir",
    "model_forward",
    "save_checkpoint",
    "save_csv",
    "to_pid",
    "to_psd",
    "train",
    "unsort_predictions",
]
