# planemorph/__init__.py

"""
planemorph - unsupervised 3D deformable registration with plane-decomposed attention.

This package provides the registration network (plane attention, Hi-Res
tokenization, optional multi-resolution fusion), the warping and loss toolkit,
synthetic data generation, training, evaluation and the file formats used by
the ``planemorph`` command line.
"""

# Version information
__version__ = '0.1.0'

from .common.schemas import ModelConfig, LossWeights, TrainConfig, CliConfig, PlaneSpec
from .data import (
    Volume,
    LabelMap,
    LandmarkSet,
    DeformationField,
    RegistrationPair,
    gen_phantom,
    gen_smooth_field,
)
from .nn import RegistrationNet, build_model, count_params, attn_cost
from .registration import warp, warp_labels, jacobian_stats, tre, total_loss, dice_eval
from .training import Trainer, train, evaluate, grad_check
from .io import save_checkpoint, load_checkpoint, load_dataset

from .common.exceptions import (
    LibraryError,
    ConfigurationError,
    InvalidParameterError,
    ShapeMismatchError,
    LatticeDivisibilityError,
    DivergenceError,
)

__all__ = [
    "ModelConfig",
    "LossWeights",
    "TrainConfig",
    "CliConfig",
    "PlaneSpec",
    "Volume",
    "LabelMap",
    "LandmarkSet",
    "DeformationField",
    "RegistrationPair",
    "gen_phantom",
    "gen_smooth_field",
    "RegistrationNet",
    "build_model",
    "count_params",
    "attn_cost",
    "warp",
    "warp_labels",
    "jacobian_stats",
    "tre",
    "total_loss",
    "dice_eval",
    "Trainer",
    "train",
    "evaluate",
    "grad_check",
    "save_checkpoint",
    "load_checkpoint",
    "load_dataset",
    "LibraryError",
    "ConfigurationError",
    "InvalidParameterError",
    "ShapeMismatchError",
    "LatticeDivisibilityError",
    "DivergenceError",
]
