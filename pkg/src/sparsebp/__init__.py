"""Dense-network training with full, fixed top-k, and adaptive sparse backprop."""

from .controller import AdaptiveConfig, AdaptiveState
from .data import Dataset, load_mnist_idx, synth_anomaly, synth_blobs, synth_images
from .engines import (
    Adaptive,
    EngineKind,
    FixedTopK,
    Full,
    GradientSet,
    backward_adaptive,
    backward_full,
    backward_sparse,
)
from .kernels import IndexSet, mask, matvec, matvec_t_masked, outer_masked, top_k
from .network import Activation, Layer, Loss, Network
from .train import RunReport, StepMetrics, TrainConfig, evaluate, sgd_step, train

__version__ = "0.1.0"

__all__ = [
    "Activation",
    "Adaptive",
    "AdaptiveConfig",
    "AdaptiveState",
    "Dataset",
    "EngineKind",
    "FixedTopK",
    "Full",
    "GradientSet",
    "IndexSet",
    "Layer",
    "Loss",
    "Network",
    "RunReport",
    "StepMetrics",
    "TrainConfig",
    "backward_adaptive",
    "backward_full",
    "backward_sparse",
    "evaluate",
    "load_mnist_idx",
    "mask",
    "matvec",
    "matvec_t_masked",
    "outer_masked",
    "sgd_step",
    "synth_anomaly",
    "synth_blobs",
    "synth_images",
    "top_k",
    "train",
]
