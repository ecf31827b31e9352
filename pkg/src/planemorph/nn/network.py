# planemorph/nn/network.py
"""
Registration network: plane-attention encoder(s) and a convolutional decoder
that emits a displacement field on the input grid.

Encoder path:  embed -> [positional encoding -> hires] -> enc1 -> merge -> enc2
Decoder:       (x2 trilinear upsample -> 3^3 conv -> LeakyReLU(0.2)) per stage,
               then a 3^3 flow head with 3 output channels.
"""
import logging
from collections import OrderedDict
from typing import Any, Dict, List, Mapping, Optional, Union

import torch
from einops import rearrange, repeat
from torch import nn

from planemorph.common.exceptions import InvalidParameterError, ShapeMismatchError
from planemorph.common.schemas import ModelConfig
from planemorph.data.volume import DeformationField, Volume, tensor_to_field, volume_to_tensor
from planemorph.nn.attention import EfficientBlock, PatchMerging
from planemorph.nn.tokenizer import HiResMerge, PatchEmbed, crop_padding, pad_to_multiple, positional_encode

logger = logging.getLogger(__name__)

FLOW_INIT_STD = 1e-5
LEAKY_SLOPE = 0.2
MIN_DECODER_CHANNELS = 4


class Encoder(nn.Module):
    """One tokenizer + two efficient blocks separated by patch merging."""

    def __init__(self, cfg: ModelConfig, stride: int):
        super().__init__()
        self.stride = stride
        d = cfg.merge_factor(stride)
        width = cfg.stage1_width(stride)
        planes = cfg.block_planes()

        self.embed = PatchEmbed(cfg.embed_dim, stride)
        self.hires = HiResMerge(cfg.embed_dim, d, width) if d > 1 else None
        self.enc1 = EfficientBlock(width, planes[0], cfg.n_heads, cfg.mlp_ratio)
        self.merge = PatchMerging(width)
        self.enc2 = EfficientBlock(2 * width, planes[1], cfg.n_heads, cfg.mlp_ratio)
        self.out_dim = 2 * width
        self.factor = cfg.downsample_factor(stride)

    def forward(self, pair: torch.Tensor) -> torch.Tensor:
        tokens = self.embed(pair)
        if self.hires is not None:
            tokens = self.hires(positional_encode(tokens))
        tokens = self.enc1(tokens)
        return self.enc2(self.merge(tokens))


class DecoderStage(nn.Module):
    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.up = nn.Upsample(scale_factor=2, mode="trilinear", align_corners=False)
        self.conv = nn.Conv3d(in_channels, out_channels, kernel_size=3, padding=1)
        self.act = nn.LeakyReLU(LEAKY_SLOPE)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.act(self.conv(self.up(x)))


class Decoder(nn.Module):
    """Bottleneck-only upsampling decoder with a near-zero flow head."""

    def __init__(self, in_channels: int, channels: List[int]):
        super().__init__()
        self.channels = list(channels)
        c_in = in_channels
        for i, c_out in enumerate(self.channels):
            self.add_module(f"up{i}", DecoderStage(c_in, c_out))
            c_in = c_out
        self.flow = nn.Conv3d(c_in, 3, kernel_size=3, padding=1)
        nn.init.normal_(self.flow.weight, mean=0.0, std=FLOW_INIT_STD)
        nn.init.zeros_(self.flow.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for i in range(len(self.channels)):
            x = getattr(self, f"up{i}")(x)
        return self.flow(x)


def default_decoder_channels(bottleneck: int, n_stages: int) -> List[int]:
    """Halves the width per stage starting from the bottleneck, floored at 4."""
    return [max(MIN_DECODER_CHANNELS, bottleneck // 2 ** (i + 1)) for i in range(n_stages)]


class RegistrationNet(nn.Module):
    """
    Maps a (fixed, moving) pair of (B, 1, H, W, D) tensors to a (B, 3, H, W, D)
    displacement field in voxel units.

    With `multires` set, two encoder paths run at strides (s1, s2); the coarser
    bottleneck is replicated onto the finer lattice and concatenated along
    channels before the shared decoder.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.config = cfg
        strides = cfg.path_strides()
        self.encoder = Encoder(cfg, strides[0])
        self.encoder2 = Encoder(cfg, strides[1]) if len(strides) > 1 else None

        bottleneck = sum(enc.out_dim for enc in self.encoders)
        channels = cfg.decoder_channels or default_decoder_channels(bottleneck, cfg.decoder_stages())
        self.decoder = Decoder(bottleneck, channels)
        self.pad_multiple = max(enc.factor for enc in self.encoders)
        # 1 -> only the first path contributes (second path features zeroed).
        self.solo_path: Optional[int] = None

    @property
    def encoders(self) -> List[Encoder]:
        return [enc for enc in (self.encoder, self.encoder2) if enc is not None]

    @property
    def is_multires(self) -> bool:
        return self.encoder2 is not None

    def _fuse(self, features: List[torch.Tensor]) -> torch.Tensor:
        finest = max(features, key=lambda f: f.shape[1])
        aligned = []
        for feat in features:
            ratio = finest.shape[1] // feat.shape[1]
            if ratio > 1:
                feat = repeat(feat, "b h w d c -> b (h rh) (w rw) (d rd) c", rh=ratio, rw=ratio, rd=ratio)
            aligned.append(feat)
        if self.solo_path == 1 and len(aligned) > 1:
            aligned = [aligned[0]] + [torch.zeros_like(f) for f in aligned[1:]]
        return torch.cat(aligned, dim=-1)

    def forward(self, fixed: torch.Tensor, moving: torch.Tensor) -> torch.Tensor:
        if fixed.shape != moving.shape:
            raise ShapeMismatchError("fixed and moving volumes differ in shape",
                                     expected=tuple(fixed.shape), actual=tuple(moving.shape),
                                     parameter="moving")
        if fixed.dim() != 5 or fixed.shape[1] != 1:
            raise ShapeMismatchError("expected (B, 1, H, W, D) volumes", expected=(-1, 1, -1, -1, -1),
                                     actual=tuple(fixed.shape), parameter="fixed")
        pair, pads = pad_to_multiple(torch.cat([fixed, moving], dim=1), self.pad_multiple)
        features = [enc(pair) for enc in self.encoders]
        bottleneck = rearrange(self._fuse(features), "b h w d c -> b c h w d")
        return crop_padding(self.decoder(bottleneck), pads)


def build_model(cfg: Union[ModelConfig, Mapping[str, Any]]) -> RegistrationNet:
    """
    Builds a model whose initial parameters depend only on `cfg` (including cfg.seed).

    Raises:
        InvalidParameterError: If `cfg` is not a valid ModelConfig.
    """
    if not isinstance(cfg, ModelConfig):
        try:
            cfg = ModelConfig.model_validate(dict(cfg))
        except ValueError as e_val:
            raise InvalidParameterError(f"invalid model configuration: {e_val}", parameter="cfg") from e_val
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        model = RegistrationNet(cfg)
    logger.info("Built %s model (strides=%s, C=%d): %d parameters.",
                cfg.variant, cfg.path_strides(), cfg.embed_dim, count_params(model))
    return model


def count_params(m: nn.Module) -> int:
    """Exact number of parameter elements."""
    return sum(p.numel() for p in m.parameters())


def param_breakdown(m: nn.Module, depth: int = 2) -> Dict[str, int]:
    """Parameter counts grouped by the first `depth` components of each name."""
    groups: Dict[str, int] = OrderedDict()
    for name, p in m.named_parameters():
        key = ".".join(name.split(".")[:depth])
        groups[key] = groups.get(key, 0) + p.numel()
    return dict(groups)


def predict_field(model: RegistrationNet, fixed: Volume, moving: Volume) -> DeformationField:
    """Runs one inference pass and returns the field as a DeformationField."""
    param = next(model.parameters())
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            flow = model(volume_to_tensor(fixed, param.device, param.dtype),
                         volume_to_tensor(moving, param.device, param.dtype))
    finally:
        model.train(was_training)
    return tensor_to_field(flow, spacing=fixed.spacing)
