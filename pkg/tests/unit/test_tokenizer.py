# planemorph/tests/unit/test_tokenizer.py
import math

import pytest
import torch

from planemorph.common.exceptions import LatticeDivisibilityError
from planemorph.nn.tokenizer import (
    HiResMerge,
    PatchEmbed,
    crop_padding,
    merge_blocks,
    pad_amounts,
    pad_to_multiple,
    positional_encode,
    sinusoidal_encoding_3d,
)


def _lattice_after(shape, stride, d=1):
    return tuple(math.ceil(n / stride) // d for n in shape)


def test_patch_embed_shape():
    embed = PatchEmbed(96, 2)
    out = embed(torch.zeros(1, 2, 32, 32, 32))
    assert out.shape == (1, 16, 16, 16, 96)


def test_patch_embed_param_count():
    embed = PatchEmbed(16, 4)
    assert sum(p.numel() for p in embed.parameters()) == 2 * 16 * 4 ** 3 + 16


def test_patch_embed_zero_input_zero_bias():
    embed = PatchEmbed(8, 2)
    torch.nn.init.zeros_(embed.conv.bias)
    out = embed(torch.zeros(1, 2, 8, 8, 8))
    assert torch.count_nonzero(out) == 0


def test_oasis_lattice_stride_four():
    assert _lattice_after((160, 192, 224), 4) == (40, 48, 56)
    assert 40 * 48 * 56 == 107520


def test_token_count_parity():
    # stride 2 followed by a d=2 merge lands on the stride-4 lattice.
    assert _lattice_after((160, 192, 224), 2, d=2) == _lattice_after((160, 192, 224), 4)
    tokens = PatchEmbed(4, 2)(torch.zeros(1, 2, 16, 24, 8))
    merged = HiResMerge(4, 2, 8)(tokens)
    plain = PatchEmbed(4, 4)(torch.zeros(1, 2, 16, 24, 8))
    assert merged.shape[1:4] == plain.shape[1:4]


def test_patch_embed_locality():
    embed = PatchEmbed(4, 2)
    x = torch.randn(1, 2, 8, 8, 8, generator=torch.Generator().manual_seed(0))
    base = embed(x)
    x2 = x.clone()
    x2[0, 1, 5, 2, 7] += 1.0
    changed = (embed(x2) != base).any(dim=-1)
    assert int(changed.sum()) == 1
    assert bool(changed[0, 2, 1, 3])


def test_pad_amounts_low_side_first():
    assert pad_amounts((7, 8, 5), 4) == [(1, 0), (0, 0), (2, 1)]


def test_pad_and_crop_round_trip():
    x = torch.randn(1, 2, 7, 9, 5)
    padded, pads = pad_to_multiple(x, 4)
    assert padded.shape[-3:] == (8, 12, 8)
    assert torch.equal(crop_padding(padded, pads), x)


def test_positional_encoding_at_origin():
    code = sinusoidal_encoding_3d((2, 2, 2), 12)
    expected = torch.tensor([0.0, 1.0, 0.0, 1.0] * 3)
    assert torch.allclose(code[0, 0, 0], expected)


def test_positional_encoding_factorizes_by_axis():
    code = sinusoidal_encoding_3d((4, 4, 4), 12)
    diff = (code[1, 2, 0] - code[1, 2, 3]).abs()
    assert torch.all(diff[:8] == 0)
    assert torch.any(diff[8:] > 0)


def test_positional_encoding_matches_scalar_reference():
    c_tok, group = 12, 4
    code = sinusoidal_encoding_3d((5, 6, 7), c_tok, dtype=torch.float64)
    h, w, d = 3, 4, 5
    ref = []
    for pos in (h, w, d):
        for i in range(group // 2):
            omega = 1.0 / 10000.0 ** (2.0 * i / group)
            ref.extend([math.sin(pos * omega), math.cos(pos * omega)])
    assert code[h, w, d].tolist() == pytest.approx(ref, abs=1e-12)


def test_positional_encoding_truncates_odd_widths():
    assert sinusoidal_encoding_3d((2, 2, 2), 8).shape == (2, 2, 2, 8)


def test_positional_encode_adds_encoding():
    tokens = torch.zeros(1, 3, 3, 3, 6)
    assert torch.equal(positional_encode(tokens)[0], sinusoidal_encoding_3d((3, 3, 3), 6))


def test_hires_merge_shapes():
    merge = HiResMerge(96, 2, 192)
    assert merge.proj.in_features == 768
    out = merge(torch.zeros(1, 16, 16, 16, 96))
    assert out.shape == (1, 8, 8, 8, 192)


def test_merge_blocks_channel_order():
    tokens = torch.arange(2 * 2 * 2 * 3, dtype=torch.float32).reshape(1, 2, 2, 2, 3)
    merged = merge_blocks(tokens, 2)
    assert merged.shape == (1, 1, 1, 1, 24)
    # offset (dh, dw, dd) major, channel minor.
    assert merged[0, 0, 0, 0, :3].tolist() == tokens[0, 0, 0, 0].tolist()
    assert merged[0, 0, 0, 0, 3:6].tolist() == tokens[0, 0, 0, 1].tolist()
    assert merged[0, 0, 0, 0, 12:15].tolist() == tokens[0, 1, 0, 0].tolist()


def test_merge_d1_identity_projection():
    merge = HiResMerge(6, 1, 6)
    with torch.no_grad():
        merge.proj.weight.copy_(torch.eye(6))
        merge.proj.bias.zero_()
    tokens = torch.randn(1, 3, 3, 3, 6)
    assert torch.equal(merge(tokens), tokens)


def test_merge_rejects_indivisible_lattice():
    with pytest.raises(LatticeDivisibilityError):
        merge_blocks(torch.zeros(1, 3, 4, 4, 2), 2)
