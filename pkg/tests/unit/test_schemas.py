# planemorph/tests/unit/test_schemas.py
import pytest
from pydantic import ValidationError

from planemorph.common.exceptions import ConfigurationError
from planemorph.common.schemas import CliConfig, LossWeights, ModelConfig, PlaneSpec, TrainConfig, parse_cli_config


def test_defaults_resolve():
    cfg = parse_cli_config({})
    assert isinstance(cfg, CliConfig)
    assert cfg.model.variant == "EM-11"
    assert cfg.model.stride == 4
    assert cfg.train.lr == 5e-4
    assert cfg.loss.lambda_bend == 0.01


def test_unknown_variant_names_key_path():
    with pytest.raises(ConfigurationError) as exc_info:
        parse_cli_config({"model": {"variant": "EM-99"}})
    assert exc_info.value.key_path == "model.variant"


def test_unknown_key_rejected():
    with pytest.raises(ConfigurationError) as exc_info:
        parse_cli_config({"train": {"learning_rate": 0.1}})
    assert exc_info.value.key_path == "train.learning_rate"


def test_non_object_document():
    with pytest.raises(ConfigurationError):
        parse_cli_config([1, 2])


def test_train_config_carries_seg_fraction():
    cfg = parse_cli_config({"loss": {"seg_fraction": 0.5}, "train": {"epochs": 3}})
    train_cfg = cfg.to_train_config()
    assert isinstance(train_cfg, TrainConfig)
    assert train_cfg.seg_fraction == 0.5
    assert train_cfg.epochs == 3
    assert cfg.loss.to_loss_weights() == LossWeights()


@pytest.mark.parametrize("stride", [1, 3, 16])
def test_invalid_strides(stride):
    with pytest.raises(ValidationError):
        ModelConfig(stride=stride)


def test_merge_d_power_of_two_only_for_stride_two():
    with pytest.raises(ValidationError):
        ModelConfig(stride=2, merge_d=3, embed_dim=8, n_heads=1)
    assert ModelConfig(stride=4, merge_d=3).merge_factor(4) == 1


def test_hires_out_width():
    assert ModelConfig(stride=2, merge_d=2, embed_dim=96).stage1_width(2) == 192
    assert ModelConfig(stride=2, merge_d=2, embed_dim=96, hires_out="C").stage1_width(2) == 96


def test_heads_must_divide_width():
    with pytest.raises(ValidationError):
        ModelConfig(stride=4, embed_dim=10, n_heads=4)


def test_planes_override_must_cover_all_axes():
    cfg = ModelConfig(planes=[["yz"], ["zx"]])
    assert cfg.block_planes() == [[PlaneSpec.YZ], [PlaneSpec.ZX]]
    with pytest.raises(ValidationError):
        ModelConfig(planes=[["xy"], ["xy"]])
    with pytest.raises(ValidationError):
        ModelConfig(planes=[["xy", "yz"], ["zx"]])


def test_downsample_and_decoder_stages():
    cfg = ModelConfig(stride=2, merge_d=2, embed_dim=8, n_heads=2)
    assert cfg.downsample_factor(2) == 8
    assert cfg.decoder_stages() == 3
    assert ModelConfig(stride=8, embed_dim=8, n_heads=2).decoder_stages() == 4


def test_loss_window_must_be_odd():
    with pytest.raises(ValidationError):
        LossWeights(ncc_window=8)


def test_ncc_var_floor_reaches_loss_weights():
    cfg = parse_cli_config({"loss": {"ncc_var_floor": 1e-4}})
    assert cfg.loss.to_loss_weights().ncc_var_floor == 1e-4
    assert LossWeights().ncc_var_floor == 0.0
    with pytest.raises(ValidationError):
        LossWeights(ncc_var_floor=-1.0)


def test_negative_learning_rate_rejected():
    with pytest.raises(ValidationError):
        TrainConfig(lr=-1e-3)
    assert TrainConfig(lr=0.0).lr == 0.0
