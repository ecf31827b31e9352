# planemorph/nn/attention.py
"""
Plane attention, transformer blocks, efficient blocks and patch merging.

Plane attention runs full multi-head self-attention independently inside each
lattice slice:

    xy: tokens sharing d, sequence over (h, w)
    yz: tokens sharing h, sequence over (w, d)
    zx: tokens sharing w, sequence over (d, h)
"""
import logging
import math
from typing import Dict, List, Sequence, Tuple, Union

import torch
from einops import rearrange
from torch import nn

from planemorph.common.exceptions import InvalidParameterError, LatticeDivisibilityError, ShapeMismatchError
from planemorph.common.schemas import PlaneSpec
from planemorph.nn.tokenizer import init_linear, merge_blocks

logger = logging.getLogger(__name__)

# (grid -> slices, slices -> grid) einops patterns per plane.
_PLANE_PATTERNS: Dict[PlaneSpec, Tuple[str, str]] = {
    PlaneSpec.XY: ("b h w d c -> (b d) (h w) c", "(b d) (h w) c -> b h w d c"),
    PlaneSpec.YZ: ("b h w d c -> (b h) (w d) c", "(b h) (w d) c -> b h w d c"),
    PlaneSpec.ZX: ("b h w d c -> (b w) (d h) c", "(b w) (d h) c -> b h w d c"),
}


def to_slices(tokens: torch.Tensor, plane: PlaneSpec) -> torch.Tensor:
    """(B, H', W', D', C) -> (B * n_slices, tokens_per_slice, C)."""
    return rearrange(tokens, _PLANE_PATTERNS[PlaneSpec(plane)][0])


def from_slices(seq: torch.Tensor, plane: PlaneSpec, batch: int, dims: Sequence[int]) -> torch.Tensor:
    h, w, d = dims
    return rearrange(seq, _PLANE_PATTERNS[PlaneSpec(plane)][1], b=batch, h=h, w=w, d=d)


class PlaneAttention(nn.Module):
    """Multi-head scaled dot-product attention restricted to one plane."""

    def __init__(self, dim: int, plane: Union[PlaneSpec, str], n_heads: int = 4):
        super().__init__()
        if n_heads < 1 or dim % n_heads:
            raise InvalidParameterError(f"n_heads={n_heads} must divide c_tok={dim}", parameter="n_heads")
        self.dim = dim
        self.plane = PlaneSpec(plane)
        self.n_heads = n_heads
        self.scale = 1.0 / math.sqrt(dim // n_heads)
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.proj = nn.Linear(dim, dim)
        for layer in (self.q, self.k, self.v, self.proj):
            init_linear(layer)

    def forward(self, tokens: torch.Tensor, return_weights: bool = False):
        if tokens.dim() != 5 or tokens.shape[-1] != self.dim:
            raise ShapeMismatchError("token grid does not match attention width",
                                     expected=(-1, -1, -1, -1, self.dim), actual=tuple(tokens.shape),
                                     parameter="tokens")
        batch, dims = tokens.shape[0], tuple(tokens.shape[1:4])
        seq = to_slices(tokens, self.plane)

        q = rearrange(self.q(seq), "n l (m k) -> n m l k", m=self.n_heads)
        k = rearrange(self.k(seq), "n l (m k) -> n m l k", m=self.n_heads)
        v = rearrange(self.v(seq), "n l (m k) -> n m l k", m=self.n_heads)

        weights = torch.softmax(torch.matmul(q, k.transpose(-2, -1)) * self.scale, dim=-1)
        out = rearrange(torch.matmul(weights, v), "n m l k -> n l (m k)")
        out = from_slices(self.proj(out), self.plane, batch, dims)
        if return_weights:
            return out, weights
        return out


class Mlp(nn.Module):
    def __init__(self, dim: int, mlp_ratio: float = 4.0):
        super().__init__()
        hidden = int(round(dim * mlp_ratio))
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)
        init_linear(self.fc1)
        init_linear(self.fc2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.act(self.fc1(x)))


class TransformerBlock(nn.Module):
    """Pre-norm residual block: x + Attn(LN(x)), then x + MLP(LN(x))."""

    def __init__(self, dim: int, plane: Union[PlaneSpec, str], n_heads: int = 4, mlp_ratio: float = 4.0):
        super().__init__()
        self.plane = PlaneSpec(plane)
        self.norm1 = nn.LayerNorm(dim)
        self.attn = PlaneAttention(dim, self.plane, n_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, mlp_ratio)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        tokens = tokens + self.attn(self.norm1(tokens))
        return tokens + self.mlp(self.norm2(tokens))


def efficient_block(tokens: torch.Tensor, planes: Sequence[PlaneSpec],
                    blocks: Sequence[TransformerBlock]) -> torch.Tensor:
    """Applies one transformer block per plane entry, in order."""
    if len(planes) != len(blocks):
        raise InvalidParameterError(f"{len(planes)} planes but {len(blocks)} transformer blocks",
                                    parameter="blocks")
    for plane, block in zip(planes, blocks):
        if block.plane != PlaneSpec(plane):
            raise InvalidParameterError(f"block attends {block.plane.value}, expected {PlaneSpec(plane).value}",
                                        parameter="planes")
        tokens = block(tokens)
    return tokens


class EfficientBlock(nn.Module):
    """Ordered sequence of plane-attention transformer blocks named b0, b1, ..."""

    def __init__(self, dim: int, planes: Sequence[Union[PlaneSpec, str]], n_heads: int = 4,
                 mlp_ratio: float = 4.0):
        super().__init__()
        self.planes: List[PlaneSpec] = [PlaneSpec(p) for p in planes]
        for i, plane in enumerate(self.planes):
            self.add_module(f"b{i}", TransformerBlock(dim, plane, n_heads, mlp_ratio))

    @property
    def blocks(self) -> List[TransformerBlock]:
        return [getattr(self, f"b{i}") for i in range(len(self.planes))]

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        return efficient_block(tokens, self.planes, self.blocks)


class PatchMerging(nn.Module):
    """2x2x2 neighbor concatenation followed by a linear map 8c -> 2c."""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.reduction = nn.Linear(8 * dim, 2 * dim)
        init_linear(self.reduction)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        dims = tuple(tokens.shape[1:4])
        if any(n % 2 for n in dims):
            raise LatticeDivisibilityError(f"patch merging needs even lattice axes, got {dims}",
                                           expected=tuple(n + n % 2 for n in dims), actual=dims,
                                           parameter="tokens")
        return self.reduction(merge_blocks(tokens, 2))
