"""Adaptive 1D CNN for beat-level heart-sound (PCG) anomaly detection."""
__version__ = "0.1.0"

from .network import (
    Beat,
    BeatDecision,
    Network,
    NetworkConfig,
    OpCounter,
    build_network,
    classify_batch,
    classify_beat,
    forward,
    layer_shapes,
)
from .training import TrainConfig, TrainHistory, backward, train
from .complexity import count_operations
from .evaluation import ConfusionMatrix, cross_validate, kfold_split, metrics, sweep_threshold

__all__ = [
    "Beat", "BeatDecision", "Network", "NetworkConfig", "OpCounter", "build_network",
    "classify_batch", "classify_beat", "forward", "layer_shapes", "TrainConfig",
    "TrainHistory", "backward", "train", "count_operations", "ConfusionMatrix",
    "cross_validate", "kfold_split", "metrics", "sweep_threshold", "__version__",
]
