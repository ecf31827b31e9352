# planemorph/registration/objectives.py
"""
Registration losses and evaluation Dice.

All torch losses take (B, 1, H, W, D) volumes, (B, 3, H, W, D) fields and
(B, H, W, D) or (B, 1, H, W, D) integer label maps.
"""
import logging
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F

from planemorph.common.exceptions import InvalidParameterError, ShapeMismatchError
from planemorph.common.schemas import LossWeights
from planemorph.data.volume import LabelMap
from planemorph.registration.field_ops import warp_tensor

logger = logging.getLogger(__name__)

DEFAULT_EPS = 1e-5


def _check_same(a: torch.Tensor, b: torch.Tensor, parameter: str) -> None:
    if tuple(a.shape) != tuple(b.shape):
        raise ShapeMismatchError("tensor shapes differ", expected=tuple(a.shape), actual=tuple(b.shape),
                                 parameter=parameter)


def lncc(fixed: torch.Tensor, warped: torch.Tensor, window: int = 9, eps: float = DEFAULT_EPS,
         var_floor: float = 0.0) -> torch.Tensor:
    """
    Negative mean local squared NCC over `window`^3 neighborhoods, in [-1, 0].

    Borders are handled by replicating edge voxels. With `var_floor` > 0 the
    mean runs only over windows whose per-voxel fixed-image variance exceeds
    the floor. The mask depends on the fixed image only.
    """
    _check_same(fixed, warped, "warped")
    if window < 1 or window % 2 == 0:
        raise InvalidParameterError(f"window must be odd, got {window}", parameter="window")
    if var_floor < 0:
        raise InvalidParameterError(f"var_floor must be >= 0, got {var_floor}", parameter="var_floor")
    radius = window // 2
    kernel = torch.ones((1, 1, window, window, window), dtype=fixed.dtype, device=fixed.device)
    n = float(window ** 3)

    def _box(x: torch.Tensor) -> torch.Tensor:
        return F.conv3d(F.pad(x, [radius] * 6, mode="replicate"), kernel)

    i_sum, j_sum = _box(fixed), _box(warped)
    i2_sum, j2_sum, ij_sum = _box(fixed * fixed), _box(warped * warped), _box(fixed * warped)

    cross = ij_sum - i_sum * j_sum / n
    i_var = (i2_sum - i_sum * i_sum / n).clamp(min=0.0)
    j_var = (j2_sum - j_sum * j_sum / n).clamp(min=0.0)
    cc = cross * cross / (i_var * j_var + eps)
    if var_floor <= 0:
        return -cc.mean()
    mask = (i_var / n > var_floor).detach()
    if not bool(mask.any()):
        logger.debug("No window above var_floor=%g; local NCC is 0.", var_floor)
        return (cc * 0.0).sum()
    return -cc[mask].mean()


def _second_derivatives(flow: torch.Tensor) -> List[torch.Tensor]:
    """Central second differences on interior voxels: [hh, ww, dd, hw, wd, dh]."""
    c = slice(1, -1)
    lo, hi = slice(None, -2), slice(2, None)
    u = flow
    centre = u[:, :, c, c, c]
    u_hh = u[:, :, hi, c, c] - 2.0 * centre + u[:, :, lo, c, c]
    u_ww = u[:, :, c, hi, c] - 2.0 * centre + u[:, :, c, lo, c]
    u_dd = u[:, :, c, c, hi] - 2.0 * centre + u[:, :, c, c, lo]
    u_hw = (u[:, :, hi, hi, c] - u[:, :, hi, lo, c] - u[:, :, lo, hi, c] + u[:, :, lo, lo, c]) / 4.0
    u_wd = (u[:, :, c, hi, hi] - u[:, :, c, hi, lo] - u[:, :, c, lo, hi] + u[:, :, c, lo, lo]) / 4.0
    u_dh = (u[:, :, hi, c, hi] - u[:, :, lo, c, hi] - u[:, :, hi, c, lo] + u[:, :, lo, c, lo]) / 4.0
    return [u_hh, u_ww, u_dd, u_hw, u_wd, u_dh]


def bending_energy_map(flow: torch.Tensor) -> torch.Tensor:
    """Per interior voxel sum over components of the bending integrand; (B, H-2, W-2, D-2)."""
    if any(n < 5 for n in flow.shape[2:]):
        raise InvalidParameterError(f"field must be >= 5 voxels per axis, got {tuple(flow.shape[2:])}",
                                    parameter="f")
    u_hh, u_ww, u_dd, u_hw, u_wd, u_dh = _second_derivatives(flow)
    per_component = (u_hh ** 2 + u_ww ** 2 + u_dd ** 2
                     + 2.0 * (u_hw ** 2 + u_wd ** 2 + u_dh ** 2))
    return per_component.sum(dim=1)


def bending_energy(flow: torch.Tensor) -> torch.Tensor:
    """Mean over interior voxels and components of the bending integrand."""
    return bending_energy_map(flow).mean() / flow.shape[1]


def _as_label_tensor(seg: torch.Tensor) -> torch.Tensor:
    if seg.dim() == 5:
        seg = seg[:, 0]
    return seg.long()


def soft_dice_per_label(fixed_seg: torch.Tensor, moving_seg: torch.Tensor, flow: torch.Tensor,
                        n_labels: int, eps: float = DEFAULT_EPS) -> torch.Tensor:
    """Soft Dice of each foreground label after a trilinear warp of the moving one-hot maps."""
    fixed_lab = _as_label_tensor(fixed_seg)
    moving_lab = _as_label_tensor(moving_seg)
    _check_same(fixed_lab, moving_lab, "moving_seg")
    if tuple(fixed_lab.shape[1:]) != tuple(flow.shape[2:]):
        raise ShapeMismatchError("label and field grids differ", expected=tuple(fixed_lab.shape[1:]),
                                 actual=tuple(flow.shape[2:]), parameter="flow")
    if n_labels < 1:
        raise InvalidParameterError(f"n_labels must be >= 1, got {n_labels}", parameter="n_labels")

    classes = n_labels + 1
    fixed_1h = F.one_hot(fixed_lab.clamp(0, n_labels), classes).movedim(-1, 1).to(flow.dtype)[:, 1:]
    moving_1h = F.one_hot(moving_lab.clamp(0, n_labels), classes).movedim(-1, 1).to(flow.dtype)
    warped_1h = warp_tensor(moving_1h, flow, "trilinear")[:, 1:]

    dims = (0, 2, 3, 4)
    intersection = (fixed_1h * warped_1h).sum(dim=dims)
    denominator = fixed_1h.sum(dim=dims) + warped_1h.sum(dim=dims)
    dice = 2.0 * intersection / (denominator + eps)
    return torch.where(denominator > 0, dice, torch.ones_like(dice))


def dice_loss(fixed_seg: torch.Tensor, moving_seg: torch.Tensor, flow: torch.Tensor,
              n_labels: int, eps: float = DEFAULT_EPS) -> torch.Tensor:
    """1 - mean soft Dice over foreground labels; labels absent from both maps count as 1."""
    return 1.0 - soft_dice_per_label(fixed_seg, moving_seg, flow, n_labels, eps).mean()


def total_loss(fixed: torch.Tensor, moving: torch.Tensor, flow: torch.Tensor,
               weights: Optional[LossWeights] = None,
               fixed_seg: Optional[torch.Tensor] = None, moving_seg: Optional[torch.Tensor] = None,
               n_labels: Optional[int] = None) -> Tuple[torch.Tensor, Dict[str, torch.Tensor]]:
    """
    Weighted registration objective.

    Without label maps: lambda_ncc * lncc + lambda_bend * bending_energy.
    With label maps the lambda_dice * dice_loss term is added.

    Returns:
        Tuple[torch.Tensor, Dict[str, torch.Tensor]]: Total loss and the unweighted
        components keyed "ncc", "bend" and (when label maps are given) "dice_loss".
    """
    w = weights or LossWeights()
    warped = warp_tensor(moving, flow, "trilinear")
    components: Dict[str, torch.Tensor] = {
        "ncc": lncc(fixed, warped, w.ncc_window, w.epsilon, w.ncc_var_floor),
        "bend": bending_energy(flow),
    }
    total = w.lambda_ncc * components["ncc"] + w.lambda_bend * components["bend"]
    if fixed_seg is not None and moving_seg is not None:
        if n_labels is None:
            n_labels = int(max(fixed_seg.max().item(), moving_seg.max().item()))
        components["dice_loss"] = dice_loss(fixed_seg, moving_seg, flow, n_labels, w.epsilon)
        total = total + w.lambda_dice * components["dice_loss"]
    return total, components


def dice_eval(a: Union[LabelMap, np.ndarray], b: Union[LabelMap, np.ndarray],
              n_labels: Optional[int] = None) -> Tuple[List[float], float]:
    """
    Hard Dice 2|A & B| / (|A| + |B|) per foreground label.

    Labels absent from both maps score 1.

    Returns:
        Tuple[List[float], float]: Per-label Dice for labels 1..n_labels and their mean.
    """
    arr_a = a.data if isinstance(a, LabelMap) else np.asarray(a)
    arr_b = b.data if isinstance(b, LabelMap) else np.asarray(b)
    if arr_a.shape != arr_b.shape:
        raise ShapeMismatchError("label maps differ in shape", expected=arr_a.shape, actual=arr_b.shape,
                                 parameter="b")
    if n_labels is None:
        n_labels = int(max(arr_a.max(initial=0), arr_b.max(initial=0)))
    if n_labels < 1:
        return [], 1.0
    per_label = []
    for k in range(1, n_labels + 1):
        mask_a = arr_a == k
        mask_b = arr_b == k
        size = int(mask_a.sum()) + int(mask_b.sum())
        if size == 0:
            per_label.append(1.0)
        else:
            per_label.append(2.0 * int(np.logical_and(mask_a, mask_b).sum()) / size)
    return per_label, float(np.mean(per_label))
