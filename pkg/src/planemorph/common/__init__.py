# planemorph/common/__init__.py
"""
The common package provides the exception hierarchy, pydantic schemas and torch
runtime helpers shared by every planemorph subpackage.
"""
from .exceptions import (
    LibraryError,
    ConfigurationError,
    InvalidParameterError,
    ShapeMismatchError,
    LatticeDivisibilityError,
    DivergenceError,
)
from .schemas import (
    PlaneSpec,
    VARIANT_PLANES,
    ModelConfig,
    LossWeights,
    TrainConfig,
    CliConfig,
    parse_cli_config,
    CostReport,
    JacobianStats,
    PairMetrics,
    MetricsReport,
    EpochMetrics,
    GradCheckReport,
)
from .torch_utils import DEFAULT_DTYPE, seed_everything, configure_runtime, resolve_device

__all__ = [
    "LibraryError",
    "ConfigurationError",
    "InvalidParameterError",
    "ShapeMismatchError",
    "LatticeDivisibilityError",
    "DivergenceError",
    "PlaneSpec",
    "VARIANT_PLANES",
    "ModelConfig",
    "LossWeights",
    "TrainConfig",
    "CliConfig",
    "parse_cli_config",
    "CostReport",
    "JacobianStats",
    "PairMetrics",
    "MetricsReport",
    "EpochMetrics",
    "GradCheckReport",
    "DEFAULT_DTYPE",
    "seed_everything",
    "configure_runtime",
    "resolve_device",
]
