# planemorph/data/volume.py
"""
Data model for volumes, label maps, landmarks and deformation fields.

All grids are numpy arrays in (H, W, D) row-major order, D fastest. Deformation
fields carry a trailing component axis (u_h, u_w, u_d) in voxel units.
Landmark coordinates are (h, w, d) voxel positions.
"""
import logging
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from planemorph.common.exceptions import InvalidParameterError, ShapeMismatchError
from planemorph.common.torch_utils import DEFAULT_DTYPE

logger = logging.getLogger(__name__)

Shape3 = Tuple[int, int, int]
Spacing3 = Tuple[float, float, float]


class GridModel(BaseModel):
    """Base for grid containers holding a numpy payload."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    shape: Shape3
    spacing: Spacing3 = (1.0, 1.0, 1.0)

    @field_validator("shape")
    @classmethod
    def check_shape(cls, value: Shape3) -> Shape3:
        if any(int(n) <= 0 for n in value):
            raise InvalidParameterError(f"shape must be positive, got {value}", parameter="shape")
        return tuple(int(n) for n in value)

    @field_validator("spacing")
    @classmethod
    def check_spacing(cls, value: Spacing3) -> Spacing3:
        if any(not np.isfinite(s) or s <= 0 for s in value):
            raise InvalidParameterError(f"spacing must be positive, got {value}", parameter="spacing")
        return tuple(float(s) for s in value)

    @property
    def n_voxels(self) -> int:
        return int(np.prod(self.shape))


def _fit_payload(data: np.ndarray, shape: Sequence[int], what: str) -> np.ndarray:
    """Reshapes a flat payload to `shape`; rejects payloads of the wrong length."""
    target = tuple(shape)
    if data.shape == target:
        return data
    if data.size != int(np.prod(target)):
        raise ShapeMismatchError(f"{what} data length {data.size} does not match shape {target}",
                                 expected=target, actual=data.shape, parameter="data")
    return data.reshape(target)


class Volume(GridModel):
    """Scalar 32-bit float volume."""
    data: np.ndarray

    @field_validator("data", mode="before")
    @classmethod
    def coerce_data(cls, value) -> np.ndarray:
        return np.ascontiguousarray(value, dtype=np.float32)

    @model_validator(mode="after")
    def check_payload(self) -> "Volume":
        self.data = _fit_payload(self.data, self.shape, "Volume")
        if not np.all(np.isfinite(self.data)):
            raise InvalidParameterError("Volume data must be finite", parameter="data")
        return self

    @classmethod
    def from_array(cls, array: np.ndarray, spacing: Spacing3 = (1.0, 1.0, 1.0)) -> "Volume":
        array = np.asarray(array)
        if array.ndim != 3:
            raise InvalidParameterError(f"expected a 3D array, got ndim={array.ndim}", parameter="array")
        return cls(shape=array.shape, spacing=spacing, data=array)


class LabelMap(GridModel):
    """Unsigned 16-bit label map; 0 is background, foreground labels are 1..n_labels."""
    data: np.ndarray
    n_labels: int = 0

    @field_validator("data", mode="before")
    @classmethod
    def coerce_data(cls, value) -> np.ndarray:
        array = np.asarray(value)
        if array.dtype.kind == "f":
            if not np.all(np.isfinite(array)) or np.any(array != np.round(array)):
                raise InvalidParameterError("LabelMap data must be integral", parameter="data")
        if array.size and (array.min() < 0 or array.max() > np.iinfo(np.uint16).max):
            raise InvalidParameterError("LabelMap values must fit in uint16", parameter="data")
        return np.ascontiguousarray(array, dtype=np.uint16)

    @model_validator(mode="after")
    def check_payload(self) -> "LabelMap":
        self.data = _fit_payload(self.data, self.shape, "LabelMap")
        max_label = int(self.data.max()) if self.data.size else 0
        if self.n_labels == 0:
            self.n_labels = max_label
        elif max_label > self.n_labels:
            raise InvalidParameterError(
                f"label value {max_label} exceeds n_labels={self.n_labels}", parameter="n_labels")
        if self.n_labels < 0:
            raise InvalidParameterError("n_labels must be non-negative", parameter="n_labels")
        return self

    @classmethod
    def from_array(cls, array: np.ndarray, n_labels: int = 0,
                   spacing: Spacing3 = (1.0, 1.0, 1.0)) -> "LabelMap":
        array = np.asarray(array)
        if array.ndim != 3:
            raise InvalidParameterError(f"expected a 3D array, got ndim={array.ndim}", parameter="array")
        return cls(shape=array.shape, spacing=spacing, data=array, n_labels=n_labels)


class DeformationField(GridModel):
    """Displacement field u(x) with phi(x) = x + u(x); data shape (H, W, D, 3)."""
    data: np.ndarray

    @field_validator("data", mode="before")
    @classmethod
    def coerce_data(cls, value) -> np.ndarray:
        return np.ascontiguousarray(value, dtype=np.float32)

    @model_validator(mode="after")
    def check_payload(self) -> "DeformationField":
        self.data = _fit_payload(self.data, tuple(self.shape) + (3,), "DeformationField")
        if not np.all(np.isfinite(self.data)):
            raise InvalidParameterError("DeformationField data must be finite", parameter="data")
        return self

    @classmethod
    def zeros(cls, shape: Shape3, spacing: Spacing3 = (1.0, 1.0, 1.0)) -> "DeformationField":
        return cls(shape=shape, spacing=spacing, data=np.zeros(tuple(shape) + (3,), dtype=np.float32))

    @classmethod
    def constant(cls, shape: Shape3, displacement: Sequence[float],
                 spacing: Spacing3 = (1.0, 1.0, 1.0)) -> "DeformationField":
        data = np.broadcast_to(np.asarray(displacement, dtype=np.float32), tuple(shape) + (3,))
        return cls(shape=shape, spacing=spacing, data=data)


class LandmarkSet(BaseModel):
    """Landmarks as (h, w, d) voxel coordinates with stable integer ids."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    points: np.ndarray
    ids: List[int]

    @field_validator("points", mode="before")
    @classmethod
    def coerce_points(cls, value) -> np.ndarray:
        array = np.asarray(value, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(array)):
            raise InvalidParameterError("landmark coordinates must be finite", parameter="points")
        return array

    @model_validator(mode="after")
    def check_ids(self) -> "LandmarkSet":
        if len(self.ids) != self.points.shape[0]:
            raise ShapeMismatchError("one id per landmark is required",
                                     expected=(self.points.shape[0],), actual=(len(self.ids),),
                                     parameter="ids")
        if len(set(self.ids)) != len(self.ids):
            raise InvalidParameterError("landmark ids must be unique", parameter="ids")
        return self

    def __len__(self) -> int:
        return len(self.ids)

    def check_bounds(self, shape: Shape3) -> None:
        """Raises InvalidParameterError if any point lies outside a grid of `shape`."""
        upper = np.asarray(shape, dtype=np.float64) - 1.0
        outside = np.any((self.points < 0.0) | (self.points > upper), axis=1)
        if np.any(outside):
            bad = [self.ids[i] for i in np.flatnonzero(outside)]
            raise InvalidParameterError(f"landmarks {bad} lie outside a grid of shape {tuple(shape)}",
                                        parameter="points")

    def ordered_like(self, other: "LandmarkSet") -> np.ndarray:
        """Returns this set's points reordered to match `other`'s ids."""
        if set(self.ids) != set(other.ids):
            raise InvalidParameterError(
                f"landmark ids differ: {sorted(set(self.ids) ^ set(other.ids))}", parameter="ids")
        index = {lid: i for i, lid in enumerate(self.ids)}
        return self.points[[index[lid] for lid in other.ids]]


class RegistrationPair(BaseModel):
    """One training or evaluation pair."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    name: str
    fixed: Volume
    moving: Volume
    seg_fixed: Optional[LabelMap] = None
    seg_moving: Optional[LabelMap] = None
    landmarks_fixed: Optional[LandmarkSet] = None
    landmarks_moving: Optional[LandmarkSet] = None

    @model_validator(mode="after")
    def check_consistency(self) -> "RegistrationPair":
        if self.fixed.shape != self.moving.shape:
            raise ShapeMismatchError(f"pair '{self.name}': fixed and moving shapes differ",
                                     expected=self.fixed.shape, actual=self.moving.shape,
                                     parameter="moving")
        for seg in (self.seg_fixed, self.seg_moving):
            if seg is not None and seg.shape != self.fixed.shape:
                raise ShapeMismatchError(f"pair '{self.name}': label map shape differs from volume",
                                         expected=self.fixed.shape, actual=seg.shape, parameter="seg")
        if (self.seg_fixed is None) != (self.seg_moving is None):
            raise InvalidParameterError(f"pair '{self.name}': label maps must be given for both images",
                                        parameter="seg")
        return self

    @property
    def has_segs(self) -> bool:
        return self.seg_fixed is not None and self.seg_moving is not None

    @property
    def has_landmarks(self) -> bool:
        return self.landmarks_fixed is not None and self.landmarks_moving is not None

    @property
    def n_labels(self) -> int:
        if not self.has_segs:
            return 0
        return max(self.seg_fixed.n_labels, self.seg_moving.n_labels)


def normalize(v: Volume) -> Volume:
    """Min-max rescales intensities to [0, 1]; constant volumes map to zeros."""
    data = v.data.astype(np.float64)
    v_min, v_max = float(data.min()), float(data.max())
    if v_max <= v_min:
        out = np.zeros_like(data)
    else:
        out = (data - v_min) / (v_max - v_min)
    return Volume(shape=v.shape, spacing=v.spacing, data=np.clip(out, 0.0, 1.0))


# --- torch conversion ---

def volume_to_tensor(v: Union[Volume, LabelMap], device: Optional[torch.device] = None,
                     dtype: Optional[torch.dtype] = None) -> torch.Tensor:
    """Returns a (1, 1, H, W, D) tensor; label maps become int64."""
    if isinstance(v, LabelMap):
        tensor = torch.from_numpy(v.data.astype(np.int64))
    else:
        tensor = torch.from_numpy(v.data.copy()).to(dtype or DEFAULT_DTYPE)
    return tensor[None, None].to(device) if device is not None else tensor[None, None]


def field_to_tensor(f: DeformationField, device: Optional[torch.device] = None,
                    dtype: Optional[torch.dtype] = None) -> torch.Tensor:
    """Returns a (1, 3, H, W, D) displacement tensor."""
    tensor = torch.from_numpy(np.moveaxis(f.data, -1, 0).copy()).to(dtype or DEFAULT_DTYPE)[None]
    return tensor.to(device) if device is not None else tensor


def tensor_to_field(t: torch.Tensor, spacing: Spacing3 = (1.0, 1.0, 1.0)) -> DeformationField:
    """Converts a (1, 3, H, W, D) or (3, H, W, D) tensor into a DeformationField."""
    if t.dim() == 5:
        if t.shape[0] != 1:
            raise InvalidParameterError("expected a single-item batch", parameter="t")
        t = t[0]
    if t.dim() != 4 or t.shape[0] != 3:
        raise ShapeMismatchError("expected a 3-component field tensor", expected=(3, -1, -1, -1),
                                 actual=tuple(t.shape), parameter="t")
    data = np.moveaxis(t.detach().cpu().to(torch.float32).numpy(), 0, -1)
    return DeformationField(shape=data.shape[:3], spacing=spacing, data=data)


def tensor_to_volume(t: torch.Tensor, spacing: Spacing3 = (1.0, 1.0, 1.0)) -> Volume:
    """Converts a (1, 1, H, W, D) or (H, W, D) tensor into a Volume."""
    data = t.detach().cpu().to(torch.float32).reshape(t.shape[-3:]).numpy()
    return Volume(shape=data.shape, spacing=spacing, data=data)
