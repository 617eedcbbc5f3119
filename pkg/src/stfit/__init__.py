"""Inductive spatio-temporal forecasting with limited training data.

Three learning parts over a pluggable STGNN backbone: a window VAE with
latent mixup that generates virtual training series, a Gumbel-Softmax
sparse topology learner that couples real and virtual nodes, and a
two-phase alternating trainer. The evaluation harness covers inductive
node splits, masked horizon metrics, ablations, and sweeps.
"""

__version__ = "0.1.0"

from .backbones import BackboneConfig, build_backbone
from .data import (
    NodeSplit,
    NormStats,
    SpatialTemporalGraph,
    TemporalSplit,
    WindowSample,
    load_dataset,
    make_windows,
    split_nodes_bfs,
    synth_generate,
    temporal_split,
    zscore_apply,
    zscore_fit,
    zscore_invert,
)
from .evaluation import MetricsReport, evaluate_checkpoint, horizon_report, infer, mae, mape, rmse
from .training import EpochRecord, TrainConfig, Trainer, train

__all__ = [
    "BackboneConfig",
    "EpochRecord",
    "MetricsReport",
    "NodeSplit",
    "NormStats",
    "SpatialTemporalGraph",
    "TemporalSplit",
    "TrainConfig",
    "Trainer",
    "WindowSample",
    "build_backbone",
    "evaluate_checkpoint",
    "horizon_report",
    "infer",
    "load_dataset",
    "mae",
    "make_windows",
    "mape",
    "rmse",
    "split_nodes_bfs",
    "synth_generate",
    "temporal_split",
    "train",
    "zscore_apply",
    "zscore_fit",
    "zscore_invert",
]
