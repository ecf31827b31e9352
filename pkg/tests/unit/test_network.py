# planemorph/tests/unit/test_network.py
import logging

import numpy as np
import pytest
import torch
from pydantic import ValidationError
from torch import nn

from planemorph.common.exceptions import InvalidParameterError, ShapeMismatchError
from planemorph.common.schemas import ModelConfig, PlaneSpec
from planemorph.data.volume import DeformationField
from planemorph.nn.attention import TransformerBlock
from planemorph.nn.network import (
    build_model,
    count_params,
    default_decoder_channels,
    param_breakdown,
    predict_field,
)

logger = logging.getLogger(__name__)


def _pair(shape, seed=0):
    gen = torch.Generator().manual_seed(seed)
    return (torch.rand((1, 1) + tuple(shape), generator=gen),
            torch.rand((1, 1) + tuple(shape), generator=gen))


def test_output_is_three_component_field_on_input_grid(tiny_config):
    model = build_model(tiny_config)
    fixed, moving = _pair((16, 16, 16))
    assert model(fixed, moving).shape == (1, 3, 16, 16, 16)


def test_non_divisible_grid_is_padded_and_cropped(tiny_config):
    model = build_model(tiny_config)
    fixed, moving = _pair((15, 17, 9))
    assert model(fixed, moving).shape == (1, 3, 15, 17, 9)


@pytest.mark.parametrize("stride", [2, 4, 8])
def test_every_stride_returns_full_resolution(stride):
    cfg = ModelConfig(variant="EM-11", stride=stride, embed_dim=8, merge_d=2, n_heads=2)
    model = build_model(cfg)
    fixed, moving = _pair((16, 16, 16))
    assert model(fixed, moving).shape == (1, 3, 16, 16, 16)


def test_initial_field_is_near_zero(tiny_config):
    model = build_model(tiny_config)
    with torch.no_grad():
        flow = model(*_pair((16, 16, 16)))
    assert float(flow.abs().max()) < 1e-2


def test_build_is_deterministic_in_seed(tiny_config):
    a = build_model(tiny_config).state_dict()
    b = build_model(tiny_config).state_dict()
    assert all(torch.equal(a[k], b[k]) for k in a)
    c = build_model(tiny_config.model_copy(update={"seed": 1})).state_dict()
    assert any(not torch.equal(a[k], c[k]) for k in a)


def test_build_does_not_consume_global_rng(tiny_config):
    torch.manual_seed(7)
    expected = torch.rand(3)
    torch.manual_seed(7)
    build_model(tiny_config)
    assert torch.equal(torch.rand(3), expected)


def test_swapping_inputs_changes_the_field(tiny_config):
    model = build_model(tiny_config)
    fixed, moving = _pair((16, 16, 16))
    with torch.no_grad():
        assert not torch.equal(model(fixed, moving), model(moving, fixed))


def test_forward_rejects_mismatched_volumes(tiny_config):
    model = build_model(tiny_config)
    with pytest.raises(ShapeMismatchError):
        model(torch.zeros(1, 1, 16, 16, 16), torch.zeros(1, 1, 16, 16, 8))
    with pytest.raises(ShapeMismatchError):
        model(torch.zeros(1, 2, 16, 16, 16), torch.zeros(1, 2, 16, 16, 16))


def test_multires_strides_are_normalized_coarsest_first():
    cfg = ModelConfig(multires=(4, 8), embed_dim=8, n_heads=2)
    assert cfg.multires == (8, 4)
    assert cfg.path_strides() == [8, 4]


def test_multires_equal_strides_rejected():
    with pytest.raises(ValidationError):
        ModelConfig(multires=(4, 4))
    with pytest.raises(InvalidParameterError):
        build_model({"multires": (4, 4)})


def test_multires_model_has_two_paths_and_more_params():
    single = build_model(ModelConfig(stride=4, embed_dim=8, n_heads=2))
    multi = build_model(ModelConfig(multires=(4, 8), embed_dim=8, n_heads=2))
    assert multi.is_multires and not single.is_multires
    assert count_params(multi) > count_params(single)
    flow = multi(*_pair((16, 16, 16)))
    assert flow.shape == (1, 3, 16, 16, 16)


def test_solo_path_zeroes_second_path_features():
    model = build_model(ModelConfig(multires=(4, 8), embed_dim=8, n_heads=2))
    fixed, moving = _pair((16, 16, 16))
    with torch.no_grad():
        both = model(fixed, moving)
        model.solo_path = 1
        solo = model(fixed, moving)
    assert not torch.equal(both, solo)


def test_parameter_count_grows_with_embedding_width():
    counts = [count_params(build_model(ModelConfig(stride=4, embed_dim=c, n_heads=4))) for c in (16, 24, 96)]
    assert counts == sorted(counts)
    assert len(set(counts)) == 3


def test_em23_has_more_parameters_than_em11():
    em11 = build_model(ModelConfig(variant="EM-11", stride=4, embed_dim=16))
    em23 = build_model(ModelConfig(variant="EM-23", stride=4, embed_dim=16))
    assert count_params(em23) > count_params(em11)


def test_em23_adds_exactly_three_transformer_blocks():
    em11_cfg = ModelConfig(variant="EM-11", stride=2, merge_d=2, embed_dim=16)
    em23_cfg = ModelConfig(variant="EM-23", stride=2, merge_d=2, embed_dim=16)
    width = em11_cfg.stage1_width(2)
    extra = [
        TransformerBlock(width, PlaneSpec.YZ, em11_cfg.n_heads, em11_cfg.mlp_ratio),
        TransformerBlock(2 * width, PlaneSpec.YZ, em11_cfg.n_heads, em11_cfg.mlp_ratio),
        TransformerBlock(2 * width, PlaneSpec.ZX, em11_cfg.n_heads, em11_cfg.mlp_ratio),
    ]
    difference = count_params(build_model(em23_cfg)) - count_params(build_model(em11_cfg))
    assert difference == sum(count_params(block) for block in extra)
    assert difference == 112672


def test_count_params_of_empty_module():
    assert count_params(nn.Module()) == 0


def test_param_breakdown_sums_to_total(tiny_config):
    model = build_model(tiny_config)
    breakdown = param_breakdown(model)
    assert sum(breakdown.values()) == count_params(model)
    assert "encoder.embed" in breakdown
    assert "decoder.flow" in breakdown


def test_default_decoder_channels_halve_with_floor():
    assert default_decoder_channels(64, 3) == [32, 16, 8]
    assert default_decoder_channels(16, 4) == [8, 4, 4, 4]


def test_custom_decoder_channel_count_must_match_stages():
    with pytest.raises(ValidationError):
        ModelConfig(stride=4, decoder_channels=[8, 8])
    model = build_model(ModelConfig(stride=4, embed_dim=8, n_heads=2, decoder_channels=[6, 5, 4]))
    assert model.decoder.channels == [6, 5, 4]


def test_predict_field_returns_deformation_field(tiny_config, phantom_pair):
    model = build_model(tiny_config)
    model.train()
    field = predict_field(model, phantom_pair.fixed, phantom_pair.moving)
    assert isinstance(field, DeformationField)
    assert field.shape == (16, 16, 16)
    assert np.all(np.isfinite(field.data))
    assert model.training


def test_reference_em11_size_is_in_the_expected_range():
    n = count_params(build_model(ModelConfig(variant="EM-11", stride=4, embed_dim=96)))
    logger.info("EM-11 stride 4, C=96: %d parameters.", n)
    assert 500_000 <= n <= 5_000_000
