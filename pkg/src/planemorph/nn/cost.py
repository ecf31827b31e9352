# planemorph/nn/cost.py
"""
Exact attention-cost ledger and multiply-add counting of built models.
"""
import logging
import math
from typing import Dict, Sequence, Tuple, Union

import pandas as pd
import torch
from pydantic import BaseModel
from torch import nn

from planemorph.common.exceptions import InvalidParameterError
from planemorph.common.schemas import CostReport, PlaneSpec
from planemorph.nn.attention import PlaneAttention

logger = logging.getLogger(__name__)

STRATEGIES: Tuple[str, ...] = ("full", "xy", "yz", "zx")
COST_COLUMNS = ["strategy", "dims", "score_elems", "params", "flops", "full_ratio"]


def _score_elements(dims: Tuple[int, int, int], strategy: str) -> int:
    h, w, d = dims
    if strategy == "full":
        return (h * w * d) ** 2
    if strategy == PlaneSpec.XY.value:
        return d * (h * w) ** 2
    if strategy == PlaneSpec.YZ.value:
        return h * (w * d) ** 2
    if strategy == PlaneSpec.ZX.value:
        return w * (d * h) ** 2
    raise InvalidParameterError(f"unknown attention strategy '{strategy}'", parameter="strategy")


def attn_cost(dims: Sequence[int], c_tok: int, strategy: Union[PlaneSpec, str]) -> CostReport:
    """
    Exact cost of one attention layer over a token lattice.

    Projection parameters (Q, K, V, output) are 4c^2 + 4c for every strategy.
    FLOPs count a multiply-add as two operations: projections 8 * N * c^2,
    scores and value mixing 4 * score_elems * c.

    Args:
        dims (Sequence[int]): Lattice extents (H', W', D').
        c_tok (int): Token width.
        strategy (Union[PlaneSpec, str]): "full", "xy", "yz" or "zx".

    Returns:
        CostReport: Integer counts.
    """
    dims3 = tuple(int(n) for n in dims)
    if len(dims3) != 3 or any(n <= 0 for n in dims3):
        raise InvalidParameterError(f"dims must be three positive integers, got {tuple(dims)}", parameter="dims")
    if c_tok <= 0:
        raise InvalidParameterError(f"c_tok must be positive, got {c_tok}", parameter="c_tok")
    key = strategy.value if isinstance(strategy, PlaneSpec) else str(strategy)
    n_tokens = dims3[0] * dims3[1] * dims3[2]
    score_elems = _score_elements(dims3, key)
    return CostReport(
        strategy=key,
        dims=dims3,
        c_tok=c_tok,
        score_elems=score_elems,
        params=4 * c_tok * c_tok + 4 * c_tok,
        projection_flops=8 * n_tokens * c_tok * c_tok,
        score_flops=4 * score_elems * c_tok,
    )


def cost_table(dims: Sequence[int], c_tok: int) -> pd.DataFrame:
    """One row per strategy; `full_ratio` is full score elements over the row's."""
    reports = [attn_cost(dims, c_tok, s) for s in STRATEGIES]
    full = reports[0].score_elems
    rows = [{
        "strategy": r.strategy,
        "dims": "x".join(str(n) for n in r.dims),
        "score_elems": r.score_elems,
        "params": r.params,
        "flops": r.flops,
        "full_ratio": full / r.score_elems,
    } for r in reports]
    return pd.DataFrame(rows, columns=COST_COLUMNS)


class MacReport(BaseModel):
    """Multiply-accumulate count of one forward pass."""
    total: int
    by_module: Dict[str, int]


def count_macs(model: nn.Module, input_shape: Sequence[int]) -> MacReport:
    """
    Counts multiply-accumulates of one forward pass on a (H, W, D) pair.

    Covers Conv3d, Linear and the two attention matmuls; normalization,
    activations and resampling are not counted.
    """
    counts: Dict[str, int] = {}
    handles = []

    def _conv_hook(name):
        def hook(module: nn.Conv3d, _inputs, output):
            kernel = math.prod(module.kernel_size)
            per_out = (module.in_channels // module.groups) * kernel
            counts[name] = counts.get(name, 0) + output.numel() * per_out
        return hook

    def _linear_hook(name):
        def hook(module: nn.Linear, _inputs, output):
            rows = output.numel() // module.out_features
            counts[name] = counts.get(name, 0) + rows * module.in_features * module.out_features
        return hook

    def _attention_hook(name):
        def hook(module: PlaneAttention, inputs, _output):
            tokens = inputs[0]
            batch, dims = tokens.shape[0], tuple(int(n) for n in tokens.shape[1:4])
            score = _score_elements(dims, module.plane.value)
            counts[name + ".scores"] = counts.get(name + ".scores", 0) + 2 * batch * score * module.dim
        return hook

    for name, module in model.named_modules():
        if isinstance(module, nn.Conv3d):
            handles.append(module.register_forward_hook(_conv_hook(name)))
        elif isinstance(module, nn.Linear):
            handles.append(module.register_forward_hook(_linear_hook(name)))
        elif isinstance(module, PlaneAttention):
            handles.append(module.register_forward_hook(_attention_hook(name)))

    param = next(model.parameters(), None)
    dtype = param.dtype if param is not None else torch.float32
    device = param.device if param is not None else torch.device("cpu")
    volume = torch.zeros((1, 1) + tuple(int(n) for n in input_shape), dtype=dtype, device=device)
    was_training = model.training
    try:
        model.eval()
        with torch.no_grad():
            model(volume, volume)
    finally:
        for handle in handles:
            handle.remove()
        model.train(was_training)

    total = sum(counts.values())
    logger.debug("count_macs(%s): %d MACs over %d modules.", tuple(input_shape), total, len(counts))
    return MacReport(total=total, by_module=counts)
