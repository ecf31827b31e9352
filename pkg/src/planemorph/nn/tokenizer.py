# planemorph/nn/tokenizer.py
"""
Patch embedding, 3D sinusoidal positional encoding and Hi-Res token merging.

Token grids are channels-last tensors of shape (B, H', W', D', C).
"""
import logging
import math
from typing import List, Sequence, Tuple

import torch
import torch.nn.functional as F
from einops import rearrange
from torch import nn

from planemorph.common.exceptions import InvalidParameterError, LatticeDivisibilityError

logger = logging.getLogger(__name__)

POSITIONAL_BASE = 10000.0


def pad_amounts(shape: Sequence[int], multiple: int) -> List[Tuple[int, int]]:
    """(low, high) zero padding per axis so each axis becomes a multiple of `multiple`.

    The low side receives the larger half.
    """
    pads = []
    for n in shape:
        total = (-int(n)) % multiple
        low = (total + 1) // 2
        pads.append((low, total - low))
    return pads


def pad_to_multiple(x: torch.Tensor, multiple: int) -> Tuple[torch.Tensor, List[Tuple[int, int]]]:
    """Zero-pads the last three axes of a (B, C, H, W, D) tensor; returns the pads used."""
    pads = pad_amounts(x.shape[-3:], multiple)
    if not any(lo or hi for lo, hi in pads):
        return x, pads
    flat = [p for lo_hi in reversed(pads) for p in lo_hi]
    return F.pad(x, flat), pads


def crop_padding(x: torch.Tensor, pads: Sequence[Tuple[int, int]]) -> torch.Tensor:
    """Inverse of `pad_to_multiple` on the last three axes."""
    slices = [slice(lo, x.shape[-3 + a] - hi) for a, (lo, hi) in enumerate(pads)]
    return x[..., slices[0], slices[1], slices[2]]


def init_linear(module: nn.Module) -> None:
    """Truncated-normal(0.02) weights, zero bias for Linear and Conv3d layers."""
    if isinstance(module, (nn.Linear, nn.Conv3d)):
        nn.init.trunc_normal_(module.weight, std=0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)


class PatchEmbed(nn.Module):
    """Non-overlapping strided conv over the stacked [fixed, moving] volume."""

    def __init__(self, embed_dim: int, stride: int, in_channels: int = 2):
        super().__init__()
        if stride < 1 or embed_dim < 1:
            raise InvalidParameterError(f"invalid patch embedding stride={stride}, embed_dim={embed_dim}",
                                        parameter="stride")
        self.stride = stride
        self.embed_dim = embed_dim
        self.conv = nn.Conv3d(in_channels, embed_dim, kernel_size=stride, stride=stride)
        init_linear(self.conv)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x, _ = pad_to_multiple(x, self.stride)
        return rearrange(self.conv(x), "b c h w d -> b h w d c")


def sinusoidal_encoding_3d(dims: Sequence[int], c_tok: int, dtype: torch.dtype = torch.float32,
                           device=None) -> torch.Tensor:
    """
    Factorized 3D sinusoidal encoding of shape (H', W', D', c_tok).

    Channels are split into three equal groups (h, w, d). Within a group the
    channels interleave sin(p * w_i), cos(p * w_i) with w_i = 1 / 10000^(2i / group).
    When c_tok is not a multiple of 6 the encoding is built for the next multiple
    and truncated.
    """
    padded = 6 * math.ceil(c_tok / 6)
    group = padded // 3
    omega = 1.0 / (POSITIONAL_BASE ** (2.0 * torch.arange(group // 2, dtype=torch.float64) / group))

    axis_codes = []
    for n in dims:
        angles = torch.arange(int(n), dtype=torch.float64)[:, None] * omega[None, :]
        axis_codes.append(torch.stack([angles.sin(), angles.cos()], dim=-1).reshape(int(n), group))

    h, w, d = (int(n) for n in dims)
    code = torch.cat([
        axis_codes[0][:, None, None, :].expand(h, w, d, group),
        axis_codes[1][None, :, None, :].expand(h, w, d, group),
        axis_codes[2][None, None, :, :].expand(h, w, d, group),
    ], dim=-1)
    return code[..., :c_tok].to(dtype=dtype, device=device)


def positional_encode(tokens: torch.Tensor) -> torch.Tensor:
    """Adds the parameter-free 3D sinusoidal encoding to a (B, H', W', D', C) grid."""
    encoding = sinusoidal_encoding_3d(tokens.shape[1:4], tokens.shape[-1], tokens.dtype, tokens.device)
    return tokens + encoding


def merge_blocks(tokens: torch.Tensor, d: int) -> torch.Tensor:
    """Concatenates each d x d x d token block along channels (offset-major, channel-minor)."""
    dims = tuple(tokens.shape[1:4])
    if any(n % d for n in dims):
        raise LatticeDivisibilityError(f"token lattice {dims} is not divisible by merge factor {d}",
                                       expected=tuple(d * math.ceil(n / d) for n in dims),
                                       actual=dims, parameter="d")
    return rearrange(tokens, "b (h dh) (w dw) (d dd) c -> b h w d (dh dw dd c)", dh=d, dw=d, dd=d)


class HiResMerge(nn.Module):
    """Merges d^3 token blocks and projects C * d^3 channels to `out_dim`."""

    def __init__(self, embed_dim: int, d: int, out_dim: int):
        super().__init__()
        if d < 1:
            raise InvalidParameterError(f"merge factor must be >= 1, got {d}", parameter="d")
        self.d = d
        self.proj = nn.Linear(embed_dim * d ** 3, out_dim)
        init_linear(self.proj)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        return self.proj(merge_blocks(tokens, self.d))
