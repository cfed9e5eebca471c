"""Neighborhood region smoothing on small MLPs, with curvature diagnostics."""

from .network import MlpSpec, forward, init_params, l2_norm
from .objective import LossBreakdown, cross_entropy, model_divergence, nrs_loss
from .trainer import TrainConfig, TrainingReport, train

__all__ = [
    "MlpSpec", "forward", "init_params", "l2_norm",
    "LossBreakdown", "cross_entropy", "model_divergence", "nrs_loss",
    "TrainConfig", "TrainingReport", "train",
]
__version__ = "0.1.0"
