# planemorph/training/gradcheck.py
"""
Finite-difference check of the analytic gradients of the full objective.
"""
import copy
import logging
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch

from planemorph.common.exceptions import InvalidParameterError
from planemorph.common.schemas import GradCheckReport, LossWeights, ModelConfig
from planemorph.data.phantoms import gen_phantom, gen_smooth_field
from planemorph.data.volume import volume_to_tensor
from planemorph.nn.network import RegistrationNet, build_model
from planemorph.registration.field_ops import warp, warp_labels
from planemorph.registration.objectives import total_loss

logger = logging.getLogger(__name__)

DEFAULT_STEPS = {torch.float64: 1e-5, torch.float32: 1e-2}
# Gradients smaller than this (both analytic and numeric) are not compared.
SKIP_BELOW = 1e-8
# Multiple of dtype eps * |loss| / h treated as finite-difference noise.
NOISE_FACTOR = 10.0
FLOW_HEAD_STD = 5e-2
# Keeps trilinear sample points away from lattice planes, where sampling is not differentiable.
FLOW_HEAD_BIAS = (0.37, 0.21, 0.13)
# Elements are drawn from this many times as many of the largest-|grad| entries of a tensor.
CANDIDATE_FACTOR = 4


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> Optional[float]:
    """|a - n| / max(|a|, |n|); None when both are below `floor`."""
    scale = max(abs(analytic), abs(numeric))
    if scale < floor:
        return None
    return abs(analytic - numeric) / scale


def default_check_config(seed: int = 0) -> ModelConfig:
    return ModelConfig(variant="EM-11", stride=2, embed_dim=8, merge_d=2, n_heads=2, seed=seed)


def _check_inputs(size: int, dtype: torch.dtype, seed: int) -> Tuple[Dict[str, torch.Tensor], int]:
    """Phantom pair (warped by a smooth field) with label maps, as tensors of `dtype`."""
    fixed, seg_fixed, _ = gen_phantom(seed, (size, size, size), n_labels=2)
    field = gen_smooth_field(seed + 1, (size, size, size), max_disp=1.5, sigma=2.0)
    moving = warp(fixed, field)
    seg_moving = warp_labels(seg_fixed, field)
    tensors = {
        "fixed": volume_to_tensor(fixed, dtype=dtype),
        "moving": volume_to_tensor(moving, dtype=dtype),
        "fixed_seg": volume_to_tensor(seg_fixed),
        "moving_seg": volume_to_tensor(seg_moving),
    }
    return tensors, seg_fixed.n_labels


def layer_type(name: str) -> str:
    """Parameter name -> layer type, e.g. 'encoder.enc1.b0.attn.q.weight' -> 'attn.q'."""
    parts = name.split(".")[:-1]
    if "attn" in parts:
        return ".".join(parts[parts.index("attn"):])
    if "mlp" in parts:
        return ".".join(parts[parts.index("mlp"):])
    if parts and parts[-1].startswith("norm"):
        return "norm"
    if len(parts) >= 2 and parts[0] == "decoder" and parts[1].startswith("up"):
        return "decoder.up"
    if parts and parts[0].startswith("encoder"):
        return ".".join(["encoder"] + parts[1:])
    return ".".join(parts)


def _allot(n_tensors: int, n_samples: int) -> List[int]:
    """Samples per tensor: one each, the remainder spread round-robin."""
    total = max(n_samples, n_tensors)
    return [total // n_tensors + (1 if i < total % n_tensors else 0) for i in range(n_tensors)]


def _pick_elements(grad: torch.Tensor, k: int, rng: np.random.Generator) -> List[int]:
    """k distinct flat indices drawn from the largest-|grad| entries."""
    magnitude = grad.detach().abs().reshape(-1).to(torch.float64)
    n_candidates = min(magnitude.numel(), CANDIDATE_FACTOR * k)
    candidates = torch.topk(magnitude, n_candidates).indices.cpu().numpy()
    chosen = rng.choice(candidates, size=min(k, n_candidates), replace=False)
    return [int(i) for i in chosen]


def grad_check(model_cfg: Optional[ModelConfig] = None, size: int = 8, dtype: torch.dtype = torch.float64,
               step: Optional[float] = None, n_samples: int = 24, seed: int = 0,
               model: Optional[RegistrationNet] = None) -> GradCheckReport:
    """
    Compares backprop gradients with central differences on sampled parameter elements.

    The objective has all three terms active (NCC, bending, Dice). Every parameter
    tensor is sampled at least once, so each layer type is covered; elements are
    drawn with a seeded RNG among the largest-gradient entries of their tensor.
    The step is scaled per element by max(1, |theta|).

    Args:
        model_cfg (Optional[ModelConfig]): Architecture; a tiny EM-11 by default.
        size (int): Edge length of the cubic test volumes.
        dtype (torch.dtype): float64 for the strict check, float32 for the loose one.
        step (Optional[float]): Base finite-difference step; dtype-dependent default.
        n_samples (int): Minimum number of parameter elements drawn.
        seed (int): Seed for data, model and element sampling.
        model (Optional[RegistrationNet]): Model to check; a copy is used, the
            caller's instance is left untouched.

    Returns:
        GradCheckReport: Largest relative error overall and per parameter tensor.
        Comparisons where both gradients are below 1e-8, or below the
        finite-difference noise of `dtype`, count as skipped.
    """
    if dtype not in DEFAULT_STEPS:
        raise InvalidParameterError(f"unsupported dtype {dtype}", parameter="dtype")
    if n_samples < 1:
        raise InvalidParameterError(f"n_samples must be >= 1, got {n_samples}", parameter="n_samples")
    h = step if step is not None else DEFAULT_STEPS[dtype]

    if model is None:
        model = build_model(model_cfg or default_check_config(seed))
    else:
        model = copy.deepcopy(model)
    model = model.to(dtype)
    model.eval()
    with torch.no_grad():
        torch.manual_seed(seed)
        head = model.decoder.flow
        head.weight.normal_(0.0, FLOW_HEAD_STD)
        head.bias.copy_(torch.tensor(FLOW_HEAD_BIAS, dtype=dtype))

    inputs, n_labels = _check_inputs(size, dtype, seed)
    weights = LossWeights(ncc_window=5)

    def objective() -> torch.Tensor:
        flow = model(inputs["fixed"], inputs["moving"])
        loss, _ = total_loss(inputs["fixed"], inputs["moving"], flow, weights,
                             fixed_seg=inputs["fixed_seg"], moving_seg=inputs["moving_seg"],
                             n_labels=n_labels)
        return loss

    model.zero_grad(set_to_none=True)
    base = objective()
    base.backward()
    noise = NOISE_FACTOR * torch.finfo(dtype).eps * max(1.0, abs(float(base))) / h
    floor = max(SKIP_BELOW, noise)

    params: List[Tuple[str, torch.nn.Parameter]] = list(model.named_parameters())
    rng = np.random.default_rng(seed)

    per_layer: Dict[str, float] = {}
    worst, n_checked, n_skipped = 0.0, 0, 0
    for (name, param), k in zip(params, _allot(len(params), n_samples)):
        grad = param.grad if param.grad is not None else torch.zeros_like(param)
        flat = param.data.view(-1)
        for e_idx in _pick_elements(grad, k, rng):
            analytic = float(grad.reshape(-1)[e_idx])
            original = float(flat[e_idx])
            h_e = h * max(1.0, abs(original))
            with torch.no_grad():
                flat[e_idx] = original + h_e
                plus = float(objective())
                flat[e_idx] = original - h_e
                minus = float(objective())
                flat[e_idx] = original
            numeric = (plus - minus) / (2.0 * h_e)

            err = relative_error(analytic, numeric, floor=floor)
            if err is None:
                n_skipped += 1
                continue
            n_checked += 1
            worst = max(worst, err)
            per_layer[name] = max(per_layer.get(name, 0.0), err)
            logger.debug("%s[%d]: analytic=%.6e numeric=%.6e rel=%.3e", name, e_idx, analytic, numeric, err)

    types = sorted({layer_type(name) for name in per_layer})
    logger.info("Gradient check (%s, h=%g): max relative error %.3e over %d elements (%d skipped), "
                "%d layer types: %s", str(dtype).replace("torch.", ""), h, worst, n_checked, n_skipped,
                len(types), ", ".join(types))
    return GradCheckReport(max_rel_error=worst, n_checked=n_checked, n_skipped=n_skipped,
                           dtype=str(dtype).replace("torch.", ""), step=h, per_layer=per_layer)
