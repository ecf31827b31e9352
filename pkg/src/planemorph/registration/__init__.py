# planemorph/registration/__init__.py
"""
Warping, deformation-field analysis and registration objectives.
"""
from .field_ops import (
    identity_grid,
    sample,
    warp_tensor,
    warp,
    warp_labels,
    jacobian_determinant,
    jacobian_stats,
    sample_points,
    tre,
    preimage_points,
)
from .objectives import (
    lncc,
    bending_energy,
    bending_energy_map,
    soft_dice_per_label,
    dice_loss,
    total_loss,
    dice_eval,
)

__all__ = [
    "identity_grid",
    "sample",
    "warp_tensor",
    "warp",
    "warp_labels",
    "jacobian_determinant",
    "jacobian_stats",
    "sample_points",
    "tre",
    "preimage_points",
    "lncc",
    "bending_energy",
    "bending_energy_map",
    "soft_dice_per_label",
    "dice_loss",
    "total_loss",
    "dice_eval",
]
