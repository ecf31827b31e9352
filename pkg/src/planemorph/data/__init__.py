# planemorph/data/__init__.py
"""
Volume data model and synthetic data generation.
"""
from .volume import (
    Volume,
    LabelMap,
    LandmarkSet,
    DeformationField,
    RegistrationPair,
    normalize,
    volume_to_tensor,
    field_to_tensor,
    tensor_to_field,
    tensor_to_volume,
)
from .phantoms import gen_phantom, gen_smooth_field, LABEL_THRESHOLD

__all__ = [
    "Volume",
    "LabelMap",
    "LandmarkSet",
    "DeformationField",
    "RegistrationPair",
    "normalize",
    "volume_to_tensor",
    "field_to_tensor",
    "tensor_to_field",
    "tensor_to_volume",
    "gen_phantom",
    "gen_smooth_field",
    "LABEL_THRESHOLD",
]
