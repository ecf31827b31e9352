# planemorph/registration/field_ops.py
"""
Spatial-transformer warping and deformation-field analysis.

A field u maps output (fixed-space) coordinates into the sampled (moving)
volume: warped(x) = v(x + u(x)). Sample coordinates are clamped to the grid;
derivatives use central differences on interior voxels only.
"""
import logging
from typing import Literal, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F

from planemorph.common.exceptions import InvalidParameterError, ShapeMismatchError
from planemorph.common.schemas import JacobianStats
from planemorph.data.volume import (
    DeformationField,
    LabelMap,
    LandmarkSet,
    Volume,
    field_to_tensor,
    tensor_to_volume,
    volume_to_tensor,
)

logger = logging.getLogger(__name__)

Interp = Literal["trilinear", "nearest"]


def identity_grid(shape: Sequence[int], dtype: torch.dtype = torch.float32, device=None) -> torch.Tensor:
    """(1, 3, H, W, D) tensor of voxel coordinates (h, w, d)."""
    axes = [torch.arange(int(n), dtype=dtype, device=device) for n in shape]
    return torch.stack(torch.meshgrid(*axes, indexing="ij"), dim=0)[None]


def _normalized_grid(coords: torch.Tensor, shape: Sequence[int]) -> torch.Tensor:
    """(B, 3, *S) voxel coordinates (h, w, d) -> (B, *S, 3) grid in [-1, 1] ordered (d, w, h)."""
    axes = []
    for a in range(3):
        n = int(shape[a])
        c = coords[:, a]
        axes.append(c * 0.0 if n == 1 else 2.0 * c / (n - 1) - 1.0)
    return torch.stack(axes[::-1], dim=-1)


def sample(vol: torch.Tensor, coords: torch.Tensor, mode: Interp = "trilinear") -> torch.Tensor:
    """
    Samples a (B, C, H, W, D) volume at absolute voxel coordinates.

    Args:
        vol (torch.Tensor): Volume to sample; any dtype for "nearest".
        coords (torch.Tensor): (B, 3, *S) coordinates (h, w, d), clamped to the grid.
        mode (Interp): "trilinear" (differentiable in vol and coords) or "nearest".

    Returns:
        torch.Tensor: (B, C, *S) samples. Trilinear sampling at lattice points
        returns the voxel values exactly; nearest rounds half-way coordinates up.
    """
    if mode not in ("trilinear", "nearest"):
        raise InvalidParameterError(f"unknown interpolation '{mode}'", parameter="interp")
    shape = tuple(vol.shape[2:])
    upper = torch.tensor([n - 1 for n in shape], dtype=coords.dtype, device=coords.device)
    clamped = torch.minimum(coords.clamp(min=0), upper.reshape((1, 3) + (1,) * (coords.dim() - 2)))

    source = vol if vol.is_floating_point() else vol.to(torch.float64)
    if mode == "nearest":
        clamped = torch.floor(clamped + 0.5)
    grid = _normalized_grid(clamped.to(source.dtype), shape)
    out = F.grid_sample(source, grid, mode="bilinear" if mode == "trilinear" else "nearest",
                        padding_mode="border", align_corners=True)
    if source is not vol:
        out = out.round().to(vol.dtype)
    return out


def warp_tensor(vol: torch.Tensor, flow: torch.Tensor, mode: Interp = "trilinear") -> torch.Tensor:
    """Warps (B, C, H, W, D) `vol` by a (B, 3, H, W, D) displacement `flow`."""
    if tuple(vol.shape[2:]) != tuple(flow.shape[2:]) or flow.shape[1] != 3:
        raise ShapeMismatchError("volume and field grids differ", expected=tuple(vol.shape[2:]),
                                 actual=tuple(flow.shape[2:]), parameter="flow")
    coords = identity_grid(vol.shape[2:], flow.dtype, flow.device) + flow
    return sample(vol, coords, mode)


def _check_grid(shape_a: Sequence[int], shape_b: Sequence[int], parameter: str) -> None:
    if tuple(shape_a) != tuple(shape_b):
        raise ShapeMismatchError("volume and field grids differ", expected=tuple(shape_a),
                                 actual=tuple(shape_b), parameter=parameter)


def warp(v: Volume, f: DeformationField, interp: Interp = "trilinear") -> Volume:
    """Returns v(x + u(x)) on v's grid."""
    _check_grid(v.shape, f.shape, "f")
    flow = field_to_tensor(f, dtype=torch.float64)
    out = warp_tensor(volume_to_tensor(v, dtype=torch.float64), flow, interp)
    return tensor_to_volume(out, spacing=v.spacing)


def warp_labels(s: LabelMap, f: DeformationField) -> LabelMap:
    """Nearest-neighbor warp of a label map; never introduces new labels."""
    _check_grid(s.shape, f.shape, "f")
    out = warp_tensor(volume_to_tensor(s), field_to_tensor(f, dtype=torch.float64), "nearest")
    return LabelMap(shape=s.shape, spacing=s.spacing, data=out[0, 0].numpy(), n_labels=s.n_labels)


# --- Jacobian ---

def _central_gradient(flow: torch.Tensor) -> torch.Tensor:
    """(B, 3, H, W, D) -> (B, 3, 3, H-2, W-2, D-2) with [b, i, j] = du_i/dx_j."""
    inner = slice(1, -1)
    grads = [
        (flow[:, :, 2:, inner, inner] - flow[:, :, :-2, inner, inner]) / 2.0,
        (flow[:, :, inner, 2:, inner] - flow[:, :, inner, :-2, inner]) / 2.0,
        (flow[:, :, inner, inner, 2:] - flow[:, :, inner, inner, :-2]) / 2.0,
    ]
    return torch.stack(grads, dim=2)


def jacobian_determinant(flow: torch.Tensor) -> torch.Tensor:
    """det(I + grad u) on interior voxels by 3x3 cofactor expansion; (B, H-2, W-2, D-2)."""
    if any(n < 3 for n in flow.shape[2:]):
        raise InvalidParameterError(f"field must be >= 3 voxels per axis, got {tuple(flow.shape[2:])}",
                                    parameter="f")
    grad = _central_gradient(flow)
    eye = torch.eye(3, dtype=flow.dtype, device=flow.device).reshape(1, 3, 3, 1, 1, 1)
    j = grad + eye
    return (j[:, 0, 0] * (j[:, 1, 1] * j[:, 2, 2] - j[:, 1, 2] * j[:, 2, 1])
            - j[:, 0, 1] * (j[:, 1, 0] * j[:, 2, 2] - j[:, 1, 2] * j[:, 2, 0])
            + j[:, 0, 2] * (j[:, 1, 0] * j[:, 2, 1] - j[:, 1, 1] * j[:, 2, 0]))


def jacobian_stats(f: Union[DeformationField, torch.Tensor]) -> JacobianStats:
    """
    Folding statistics of phi(x) = x + u(x).

    Returns:
        JacobianStats: neg_fraction is the percentage of interior voxels with
        det(J) <= 0; min_det and mean_det over the same voxels.

    Raises:
        InvalidParameterError: If any axis has fewer than 3 voxels.
    """
    if isinstance(f, DeformationField):
        flow = field_to_tensor(f, dtype=torch.float64)
    else:
        flow = f.detach().to(torch.float64)
        if flow.dim() == 4:
            flow = flow[None]
    with torch.no_grad():
        det = jacobian_determinant(flow)
    n_interior = det.numel()
    return JacobianStats(
        neg_fraction=100.0 * float((det <= 0).sum().item()) / n_interior,
        min_det=float(det.min().item()),
        mean_det=float(det.mean().item()),
    )


# --- Landmarks ---

def sample_points(f: DeformationField, points: np.ndarray) -> np.ndarray:
    """Trilinearly interpolated displacement at (N, 3) voxel coordinates; returns (N, 3)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    coords = torch.from_numpy(pts.T.copy())[None, :, :, None, None]
    disp = sample(field_to_tensor(f, dtype=torch.float64), coords, "trilinear")
    return disp[0, :, :, 0, 0].numpy().T


def tre(moving_pts: LandmarkSet, fixed_pts: LandmarkSet, f: DeformationField,
        spacing: Sequence[float] = (1.0, 1.0, 1.0)) -> Tuple[float, float]:
    """
    Target registration error in mm.

    For each id, error = |(p_fixed + u(p_fixed)) - p_moving| with each axis
    scaled by `spacing`.

    Returns:
        Tuple[float, float]: Mean and population standard deviation.

    Raises:
        InvalidParameterError: If the id sets differ or a point is out of bounds.
    """
    fixed_pts.check_bounds(f.shape)
    moving_pts.check_bounds(f.shape)
    moving = moving_pts.ordered_like(fixed_pts)
    mapped = fixed_pts.points + sample_points(f, fixed_pts.points)
    errors = np.linalg.norm((mapped - moving) * np.asarray(spacing, dtype=np.float64), axis=1)
    if errors.size == 0:
        raise InvalidParameterError("no landmarks to compare", parameter="fixed_pts")
    return float(errors.mean()), float(errors.std())


def preimage_points(f: DeformationField, points: np.ndarray, iterations: int = 20) -> np.ndarray:
    """
    Points q with q + u(q) = p for each p, by fixed-point iteration q <- p - u(q).

    Iterates are clamped to the grid; the iteration converges when u is
    contractive (|grad u| < 1), which holds for smooth synthetic fields.
    """
    target = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    upper = np.asarray(f.shape, dtype=np.float64) - 1.0
    q = target.copy()
    for _ in range(iterations):
        q = np.clip(target - sample_points(f, q), 0.0, upper)
    return q
