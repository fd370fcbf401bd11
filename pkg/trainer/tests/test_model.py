"""Topology, validation, and the gradient check."""

import pytest
import torch
from torch import nn

from icetrain import UNet, UNetSpec


def test_full_spec_has_28_conv_layers():
    model = UNet(UNetSpec())
    assert model.conv_layer_count() == 28 == model.spec.conv_layers


@pytest.mark.parametrize("depth", [1, 2, 3, 4, 5])
def test_conv_layer_arithmetic_across_depths(depth):
    spec = UNetSpec(input_size=2 ** depth, depth=depth, base_channels=2)
    model = UNet(spec)
    assert model.conv_layer_count() == spec.conv_layers == 5 * depth + 3


def test_probabilities_shape_and_normalization():
    model = UNet(UNetSpec(input_size=64, base_channels=8))
    with torch.no_grad():
        probs = model.probabilities(torch.rand(2, 3, 64, 64))
    assert tuple(probs.shape) == (2, 3, 64, 64)
    assert float((probs.sum(dim=1) - 1).abs().max()) <= 1e-5


def test_output_spatial_dims_match_input():
    model = UNet(UNetSpec(input_size=64, base_channels=4))
    with torch.no_grad():
        out = model(torch.rand(1, 3, 96, 128))
    assert tuple(out.shape) == (1, 3, 96, 128)


def test_forward_rejects_bad_shapes():
    model = UNet(UNetSpec(input_size=64, base_channels=4))
    with pytest.raises(ValueError, match="expected"):
        model(torch.rand(1, 1, 64, 64))
    with pytest.raises(ValueError, match="divisible"):
        model(torch.rand(1, 3, 48, 48))


def test_spec_validation():
    with pytest.raises(ValueError, match="divisible"):
        UNetSpec(input_size=100)
    with pytest.raises(ValueError, match="dropout"):
        UNetSpec(dropout=0.5)
    with pytest.raises(ValueError, match=">= 1"):
        UNetSpec(depth=0)
    with pytest.raises(ValueError, match=">= 1"):
        UNetSpec(base_channels=0)


def test_spec_dict_round_trip_ignores_unknown_keys():
    spec = UNetSpec(input_size=64, depth=3, base_channels=8, dropout=0.2)
    data = spec.to_dict()
    data["future_knob"] = True
    assert UNetSpec.from_dict(data) == spec


def test_eval_mode_is_deterministic_despite_dropout():
    model = UNet(UNetSpec(input_size=32, base_channels=8, dropout=0.3))
    model.eval()
    x = torch.rand(1, 3, 32, 32)
    with torch.no_grad():
        assert torch.equal(model(x), model(x))


def test_train_mode_dropout_actually_drops():
    torch.manual_seed(0)
    model = UNet(UNetSpec(input_size=32, base_channels=8, dropout=0.3))
    model.train()
    x = torch.rand(1, 3, 32, 32)
    with torch.no_grad():
        assert not torch.equal(model(x), model(x))


def test_final_layer_gradients_match_finite_differences():
    torch.manual_seed(11)
    model = UNet(UNetSpec(input_size=8, depth=2, base_channels=4, dropout=0.0))
    model.double().eval()
    x = torch.rand(1, 3, 8, 8, dtype=torch.float64)
    y = torch.randint(0, 3, (1, 8, 8))
    criterion = nn.CrossEntropyLoss()

    def loss_value():
        return criterion(model(x), y)

    loss = loss_value()
    model.zero_grad()
    loss.backward()

    h = 1e-6
    with torch.no_grad():
        for param in (model.out.weight, model.out.bias):
            analytic = param.grad.detach().clone().reshape(-1)
            flat = param.data.reshape(-1)
            for idx in range(flat.numel()):
                keep = float(flat[idx])
                flat[idx] = keep + h
                up = float(loss_value())
                flat[idx] = keep - h
                down = float(loss_value())
                flat[idx] = keep
                numeric = (up - down) / (2 * h)
                scale = max(abs(numeric), abs(float(analytic[idx])), 1e-8)
                rel = abs(numeric - float(analytic[idx])) / scale
                assert rel <= 1e-3, (f"param index {idx}: analytic "
                                     f"{float(analytic[idx]):.3e} vs numeric {numeric:.3e}")
