"""Mixed-domain semi-supervised segmentation on a numpy U-Net.

Labeled images come from a single domain and unlabeled images from several.
Training pairs a mean teacher with bidirectional copy-paste, symmetric
guidance, and progress-aware amplitude mixing in the Fourier domain.
"""

from .estimator import MiDSSSegmenter
from .exceptions import (
    ArchitectureMismatchError,
    ConfigError,
    DimensionError,
    NumericalIntegrityError,
    ParseError,
    TrainingIntegrityError,
)
from .trainer import ABLATION_ROWS, MethodFlags, TrainConfig, run, train_iteration

__all__ = [
    "ABLATION_ROWS",
    "ArchitectureMismatchError",
    "ConfigError",
    "DimensionError",
    "MethodFlags",
    "MiDSSSegmenter",
    "NumericalIntegrityError",
    "ParseError",
    "TrainConfig",
    "TrainingIntegrityError",
    "run",
    "train_iteration",
]

__version__ = "0.1.0"
