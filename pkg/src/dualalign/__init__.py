"""Unsupervised cross-modality adaptation of 2D segmentation networks via
joint image-level and feature-level adversarial alignment."""

from .core import (
    LabelVolume,
    LossRecord,
    LossWeights,
    Slice2D,
    SliceBatch,
    Volume3D,
    validate_pair,
)
from .networks import ArchConfig, build_networks
from .preprocess import AugmentConfig, PreprocessConfig
from .state import SifaState, build_state, load_checkpoint, save_checkpoint
from .synthetic import SyntheticConfig, make_synthetic_domains
from .trainer import TrainConfig, TrainData, train, train_step

__all__ = [
    "ArchConfig",
    "AugmentConfig",
    "LabelVolume",
    "LossRecord",
    "LossWeights",
    "PreprocessConfig",
    "SifaState",
    "Slice2D",
    "SliceBatch",
    "SyntheticConfig",
    "TrainConfig",
    "TrainData",
    "Volume3D",
    "build_networks",
    "build_state",
    "load_checkpoint",
    "make_synthetic_domains",
    "save_checkpoint",
    "train",
    "train_step",
    "validate_pair",
]

__version__ = "0.1.0"
