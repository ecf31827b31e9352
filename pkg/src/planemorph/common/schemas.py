# planemorph/common/schemas.py
"""
Pydantic models for configuration documents and reports.
"""
import math
from enum import Enum
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from planemorph.common.exceptions import ConfigurationError


# --- Common Base Models ---

class StrictModel(BaseModel):
    """Base model for configuration sections: unknown keys are errors."""
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class ReportModel(BaseModel):
    """Base model for reports written to JSON."""
    model_config = ConfigDict(extra="ignore")


# --- Planes and Variants ---

class PlaneSpec(str, Enum):
    """Lattice plane a transformer block attends within.

    xy attends over (H', W') inside each fixed-d slice, yz over (W', D') inside
    each fixed-h slice and zx over (D', H') inside each fixed-w slice.
    """
    XY = "xy"
    YZ = "yz"
    ZX = "zx"


VARIANT_PLANES: Dict[str, List[List[PlaneSpec]]] = {
    "EM-11": [[PlaneSpec.XY], [PlaneSpec.YZ]],
    "EM-23": [[PlaneSpec.XY, PlaneSpec.YZ], [PlaneSpec.XY, PlaneSpec.YZ, PlaneSpec.ZX]],
}

ALLOWED_STRIDES = (2, 4, 8)


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


# --- Model Configuration ---

class ModelConfig(StrictModel):
    """Architecture hyperparameters.

    `stride` is used by single-resolution models; when `multires` is set the two
    path strides replace it. `merge_d` only applies to stride-2 paths.
    """
    variant: Literal["EM-11", "EM-23"] = "EM-11"
    stride: int = 4
    embed_dim: int = Field(96, gt=0)
    merge_d: int = Field(2, ge=1)
    hires_out: Literal["Cd", "C"] = "Cd"
    n_heads: int = Field(4, ge=1)
    mlp_ratio: float = Field(4.0, gt=0)
    multires: Optional[Tuple[int, int]] = None
    planes: Optional[List[List[PlaneSpec]]] = None
    decoder_channels: Optional[List[int]] = None
    seed: int = 0

    @field_validator("stride")
    @classmethod
    def check_stride(cls, value: int) -> int:
        if value not in ALLOWED_STRIDES:
            raise ValueError(f"stride must be one of {ALLOWED_STRIDES}, got {value}")
        return value

    @field_validator("multires")
    @classmethod
    def normalize_multires(cls, value: Optional[Tuple[int, int]]) -> Optional[Tuple[int, int]]:
        if value is None:
            return None
        s_a, s_b = value
        for s in (s_a, s_b):
            if s not in ALLOWED_STRIDES:
                raise ValueError(f"multires strides must be in {ALLOWED_STRIDES}, got {s}")
        if s_a == s_b:
            raise ValueError(f"multires strides must be distinct, got ({s_a}, {s_b})")
        return (max(s_a, s_b), min(s_a, s_b))

    @field_validator("decoder_channels")
    @classmethod
    def check_decoder_channels(cls, value: Optional[List[int]]) -> Optional[List[int]]:
        if value is not None and any(c <= 0 for c in value):
            raise ValueError("decoder_channels must be positive")
        return value

    @model_validator(mode="after")
    def check_consistency(self) -> "ModelConfig":
        if 2 in self.path_strides() and not _is_power_of_two(self.merge_d):
            raise ValueError(f"merge_d must be a power of two, got {self.merge_d}")
        if self.planes is not None:
            expected_counts = [len(b) for b in VARIANT_PLANES[self.variant]]
            counts = [len(b) for b in self.planes]
            if counts != expected_counts:
                raise ValueError(
                    f"planes for {self.variant} must have per-block counts {expected_counts}, got {counts}")
            covered = {axis for block in self.planes for p in block for axis in PlaneSpec(p).value}
            if covered != {"x", "y", "z"}:
                raise ValueError("planes must jointly cover the x, y and z axes")
        for s in self.path_strides():
            width = self.stage1_width(s)
            if width % self.n_heads != 0:
                raise ValueError(
                    f"n_heads ({self.n_heads}) must divide the stage-1 width {width} of the stride-{s} path")
        if self.decoder_channels is not None:
            n_stages = self.decoder_stages()
            if len(self.decoder_channels) != n_stages:
                raise ValueError(
                    f"decoder_channels needs {n_stages} entries for this stride/merge setup, "
                    f"got {len(self.decoder_channels)}")
        return self

    # --- Derived quantities ---

    def path_strides(self) -> List[int]:
        """Patch-embedding stride of every encoder path (coarsest first for multires)."""
        return list(self.multires) if self.multires is not None else [self.stride]

    def merge_factor(self, stride: int) -> int:
        """Hi-Res merge factor d for a path (1 when the path is not stride 2)."""
        return self.merge_d if stride == 2 else 1

    def stage1_width(self, stride: int) -> int:
        """Token width entering the first efficient block of a path."""
        d = self.merge_factor(stride)
        if d > 1 and self.hires_out == "Cd":
            return self.embed_dim * d
        return self.embed_dim

    def bottleneck_width(self, stride: int) -> int:
        return 2 * self.stage1_width(stride)

    def downsample_factor(self, stride: int) -> int:
        """Total voxel-to-bottleneck-token factor per axis of a path."""
        return stride * self.merge_factor(stride) * 2

    def decoder_stages(self) -> int:
        """Number of x2 upsampling stages back to full resolution."""
        finest = min(self.downsample_factor(s) for s in self.path_strides())
        return int(round(math.log2(finest)))

    def block_planes(self) -> List[List[PlaneSpec]]:
        """Plane sequence of each efficient block."""
        if self.planes is not None:
            return [list(b) for b in self.planes]
        return [list(b) for b in VARIANT_PLANES[self.variant]]


# --- Loss Configuration ---

class LossWeights(StrictModel):
    lambda_ncc: float = Field(1.0, ge=0)
    lambda_bend: float = Field(0.01, ge=0)
    lambda_dice: float = Field(1.0, ge=0)
    ncc_window: int = Field(9, ge=3)
    epsilon: float = Field(1e-5, gt=0)
    # Per-voxel fixed-image variance below which an NCC window is left out; 0 keeps every window.
    ncc_var_floor: float = Field(0.0, ge=0)

    @field_validator("ncc_window")
    @classmethod
    def check_window_odd(cls, value: int) -> int:
        if value % 2 == 0:
            raise ValueError(f"ncc_window must be odd, got {value}")
        return value


# --- Training Configuration ---

class TrainConfig(StrictModel):
    # lr = 0 is accepted so a run can be used as a null-update baseline.
    lr: float = Field(5e-4, ge=0)
    betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = Field(1e-8, gt=0)
    scheduler: Literal["cosine", "step", "none"] = "cosine"
    step_gamma: float = Field(0.5, gt=0)
    step_every: int = Field(30, ge=1)
    epochs: int = Field(100, ge=1)
    batch_size: Literal[1] = 1
    seg_fraction: float = Field(0.0, ge=0.0, le=1.0)
    seed: int = 0
    checkpoint_every: Optional[int] = Field(None, ge=1)
    multires_phase_epochs: Optional[int] = Field(None, ge=0)
    max_steps: Optional[int] = Field(None, ge=1)


# --- CLI Configuration Document ---

class CliLossSection(StrictModel):
    lambda_ncc: float = Field(1.0, ge=0)
    lambda_bend: float = Field(0.01, ge=0)
    lambda_dice: float = Field(1.0, ge=0)
    ncc_window: int = Field(9, ge=3)
    ncc_var_floor: float = Field(0.0, ge=0)
    seg_fraction: float = Field(0.0, ge=0.0, le=1.0)

    def to_loss_weights(self) -> LossWeights:
        return LossWeights(lambda_ncc=self.lambda_ncc, lambda_bend=self.lambda_bend,
                           lambda_dice=self.lambda_dice, ncc_window=self.ncc_window,
                           ncc_var_floor=self.ncc_var_floor)


class CliTrainSection(StrictModel):
    lr: float = Field(5e-4, ge=0)
    epochs: int = Field(100, ge=1)
    scheduler: Literal["cosine", "step", "none"] = "cosine"
    seed: int = 0
    step_gamma: float = Field(0.5, gt=0)
    step_every: int = Field(30, ge=1)
    max_steps: Optional[int] = Field(None, ge=1)
    checkpoint_every: Optional[int] = Field(None, ge=1)
    multires_phase_epochs: Optional[int] = Field(None, ge=0)


class CliConfig(StrictModel):
    """JSON document accepted by ``planemorph train`` and ``planemorph count-params``."""
    model: ModelConfig = Field(default_factory=ModelConfig)
    loss: CliLossSection = Field(default_factory=CliLossSection)
    train: CliTrainSection = Field(default_factory=CliTrainSection)

    def to_train_config(self) -> TrainConfig:
        return TrainConfig(seg_fraction=self.loss.seg_fraction,
                           **self.train.model_dump())


def _format_loc(loc: Tuple[Any, ...]) -> str:
    return ".".join(str(part) for part in loc)


def parse_cli_config(document: Dict[str, Any]) -> CliConfig:
    """
    Validates a configuration document and fills defaults.

    Args:
        document (Dict[str, Any]): Parsed JSON document.

    Returns:
        CliConfig: The resolved configuration.

    Raises:
        ConfigurationError: With `key_path` naming the first offending key
            (e.g. ``"model.variant"``).
    """
    if not isinstance(document, dict):
        raise ConfigurationError("Configuration document must be a JSON object.", key_path="")
    try:
        return CliConfig.model_validate(document)
    except ValidationError as e_val:
        first = e_val.errors()[0]
        key_path = _format_loc(first.get("loc", ()))
        # Literal/enum errors report the allowed values in `msg`.
        raise ConfigurationError(f"Invalid configuration: {first.get('msg')}", key_path=key_path) from e_val


# --- Reports ---

class CostReport(ReportModel):
    """Exact attention cost of one transformer block."""
    strategy: str
    dims: Tuple[int, int, int]
    c_tok: int
    score_elems: int
    params: int
    projection_flops: int
    score_flops: int

    @property
    def flops(self) -> int:
        return self.projection_flops + self.score_flops


class JacobianStats(ReportModel):
    neg_fraction: float = Field(ge=0.0, le=100.0)
    min_det: float
    mean_det: float


class PairMetrics(ReportModel):
    """Metrics of one registered pair. Dice fields are None when the pair has no label maps."""
    name: str
    dice: Optional[float] = None
    dice_per_label: List[float] = []
    dice_before: Optional[float] = None
    neg_fraction: float
    min_det: float
    tre_mean: Optional[float] = None
    tre_sd: Optional[float] = None
    tre_before: Optional[float] = None
    runtime_s: float


class MetricsReport(ReportModel):
    n_pairs: int
    n_params: int
    dice_mean: Optional[float] = None
    dice_sd: Optional[float] = None
    dice_before_mean: Optional[float] = None
    neg_fraction_mean: float
    neg_fraction_sd: float
    tre_mean: Optional[float] = None
    tre_sd: Optional[float] = None
    tre_before_mean: Optional[float] = None
    runtime_mean_s: float
    pairs: List[PairMetrics] = []


class EpochMetrics(ReportModel):
    epoch: int
    total: float
    ncc: float
    bend: float
    dice_loss: float
    val_dice: float
    val_negjac: float
    lr: float


class GradCheckReport(ReportModel):
    max_rel_error: float
    n_checked: int
    n_skipped: int
    dtype: str
    step: float
    per_layer: Dict[str, float] = {}
