# planemorph/tests/unit/test_gradcheck.py
import pytest
import torch

from planemorph.common.exceptions import InvalidParameterError
from planemorph.nn.network import build_model
from planemorph.training.gradcheck import default_check_config, grad_check, layer_type, relative_error

LAYER_PREFIXES = (
    "encoder.embed.conv.",
    "encoder.hires.proj.",
    ".attn.q.",
    ".attn.v.",
    ".attn.proj.",
    ".mlp.fc1.",
    "encoder.merge.reduction.",
    "decoder.up0.conv.",
    "decoder.flow.",
)


def test_relative_error():
    assert relative_error(1.0, 1.0) == 0.0
    assert relative_error(2.0, 1.0) == pytest.approx(0.5)
    assert relative_error(1e-12, -1e-12) is None
    assert relative_error(5e-9, 0.0) is None
    assert relative_error(2e-8, 1e-8) == pytest.approx(0.5)


def test_layer_type():
    assert layer_type("encoder.enc1.b0.attn.q.weight") == "attn.q"
    assert layer_type("encoder2.enc2.b1.mlp.fc2.bias") == "mlp.fc2"
    assert layer_type("encoder.enc1.b0.norm1.weight") == "norm"
    assert layer_type("decoder.up2.conv.weight") == "decoder.up"
    assert layer_type("encoder.hires.proj.weight") == "encoder.hires.proj"
    assert layer_type("decoder.flow.bias") == "decoder.flow"


def test_float64_gradients_match_finite_differences():
    report = grad_check(dtype=torch.float64, n_samples=24, seed=0)
    assert report.dtype == "float64"
    assert report.n_checked >= 20
    assert report.max_rel_error <= 1e-4
    assert all(err <= report.max_rel_error for err in report.per_layer.values())
    for prefix in LAYER_PREFIXES:
        assert any(prefix in name for name in report.per_layer), prefix


def test_every_parameter_tensor_is_drawn():
    n_tensors = len(list(build_model(default_check_config(0)).parameters()))
    report = grad_check(dtype=torch.float64, n_samples=1, seed=0)
    assert report.n_checked + report.n_skipped == n_tensors


def test_grad_check_is_deterministic_in_seed():
    first = grad_check(dtype=torch.float64, n_samples=1, seed=3)
    second = grad_check(dtype=torch.float64, n_samples=1, seed=3)
    assert first.per_layer == second.per_layer
    assert first.max_rel_error == second.max_rel_error


def test_grad_check_leaves_the_given_model_untouched():
    model = build_model(default_check_config(0))
    before = {name: p.detach().clone() for name, p in model.state_dict().items()}
    grad_check(dtype=torch.float64, n_samples=1, seed=0, model=model)
    for name, tensor in model.state_dict().items():
        assert tensor.dtype == torch.float32
        assert torch.equal(tensor, before[name]), name


@pytest.mark.slow
def test_float32_gradients_match_loosely():
    report = grad_check(dtype=torch.float32, n_samples=24, seed=1)
    assert report.n_checked >= 1
    assert report.max_rel_error <= 1e-2


def test_grad_check_rejects_bad_arguments():
    with pytest.raises(InvalidParameterError):
        grad_check(dtype=torch.float16)
    with pytest.raises(InvalidParameterError):
        grad_check(n_samples=0)
