import numpy as np
import pytest
import torch

from promptseg.adapter import (
    AdapterConfig,
    adapter_forward,
    init_adapters,
    trainable_parameters,
)
from promptseg.errors import ValidationError

from gradcheck import check_parameter_gradients
from oracles import adapter_oracle


def _stack(num_layers=4, input_dim=8, mid_dim=32, out_dim=8, init="zero_up", seed=0):
    return init_adapters(
        AdapterConfig(
            num_layers=num_layers,
            input_dim=input_dim,
            mid_dim=mid_dim,
            out_dim=out_dim,
            init_scheme=init,
        ),
        seed,
    )


class TestAdapterForward:
    def test_zero_up_init_gives_zero_prompts(self):
        stack = _stack()
        features = torch.rand(5, 8, generator=torch.Generator().manual_seed(0))
        for i in range(4):
            assert torch.all(adapter_forward(stack, features, i) == 0)

    def test_zero_features_zero_biases_give_zero(self):
        stack = _stack(init="small_random", seed=3)
        with torch.no_grad():
            for layer in stack.tune:
                layer.bias.zero_()
            stack.up.bias.zero_()
        out = adapter_forward(stack, torch.zeros(2, 8), 1)
        assert torch.all(out == 0)

    def test_hand_set_weights_match_dense_oracle(self):
        stack = _stack(num_layers=1, input_dim=3, mid_dim=2, out_dim=3,
                       init="small_random", seed=0).double()
        w_tune = np.array([[0.3, -0.7, 1.1], [0.05, 0.4, -0.2]])
        b_tune = np.array([0.1, -0.3])
        w_up = np.array([[1.5, -0.4], [0.2, 0.9], [-1.0, 0.6]])
        b_up = np.array([0.02, -0.01, 0.3])
        with torch.no_grad():
            stack.tune[0].weight.copy_(torch.from_numpy(w_tune))
            stack.tune[0].bias.copy_(torch.from_numpy(b_tune))
            stack.up.weight.copy_(torch.from_numpy(w_up))
            stack.up.bias.copy_(torch.from_numpy(b_up))
        features = np.array([[0.5, -1.2, 0.8], [2.0, 0.3, -0.6]])
        out = adapter_forward(stack, torch.from_numpy(features), 0).detach().numpy()
        expected = adapter_oracle(features, w_tune, b_tune, w_up, b_up)
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_layer_index_out_of_range(self):
        stack = _stack()
        with pytest.raises(ValidationError):
            adapter_forward(stack, torch.zeros(2, 8), 4)
        with pytest.raises(ValidationError):
            adapter_forward(stack, torch.zeros(2, 8), -1)

    def test_shape_mismatch_rejected(self):
        stack = _stack()
        with pytest.raises(ValidationError):
            adapter_forward(stack, torch.zeros(2, 5), 0)


class TestInitAdapters:
    def test_same_seed_bit_identical(self):
        a = _stack(init="small_random", seed=7)
        b = _stack(init="small_random", seed=7)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)

    def test_different_seeds_differ(self):
        a = _stack(init="small_random", seed=7)
        b = _stack(init="small_random", seed=8)
        assert any(
            not torch.equal(la.weight, lb.weight) for la, lb in zip(a.tune, b.tune)
        )

    def test_invalid_config_rejected(self):
        with pytest.raises(ValidationError):
            AdapterConfig(num_layers=0, input_dim=8, out_dim=8)
        with pytest.raises(ValidationError):
            AdapterConfig(num_layers=1, input_dim=8, out_dim=8, mid_dim=0)
        with pytest.raises(ValidationError):
            AdapterConfig(num_layers=1, input_dim=8, out_dim=8, init_scheme="bogus")


class TestTrainableParameters:
    def test_parameter_count_formula(self):
        stack = _stack(num_layers=4, input_dim=8, mid_dim=32, out_dim=8)
        count = sum(p.numel() for p in trainable_parameters(stack))
        assert count == 4 * (8 * 32 + 32) + (32 * 8 + 8)

    def test_shared_up_appears_once(self):
        stack = _stack()
        ids = [id(p) for p in trainable_parameters(stack)]
        assert len(ids) == len(set(ids))
        assert id(stack.up.weight) in ids

    def test_zero_up_entries_are_zero(self):
        stack = _stack()
        params = trainable_parameters(stack)
        assert torch.all(params[-2] == 0) and torch.all(params[-1] == 0)

    def test_adding_a_layer_adds_tune_parameters_only(self):
        small = _stack(num_layers=3)
        large = _stack(num_layers=4)
        diff = sum(p.numel() for p in trainable_parameters(large)) - sum(
            p.numel() for p in trainable_parameters(small)
        )
        assert diff == 8 * 32 + 32


class TestAdapterProperties:
    def test_gradients_match_finite_differences(self):
        stack = _stack(num_layers=2, input_dim=4, mid_dim=3, out_dim=4,
                       init="small_random", seed=1).double()
        g = torch.Generator().manual_seed(0)
        features = torch.rand(3, 4, generator=g, dtype=torch.float64)
        target = torch.rand(3, 4, generator=g, dtype=torch.float64)

        def loss_fn():
            total = torch.zeros((), dtype=torch.float64)
            for i in range(2):
                total = total + (stack(features, i) - target).pow(2).sum()
            return total

        worst = check_parameter_gradients(loss_fn, trainable_parameters(stack))
        assert worst < 1e-4

    def test_shared_up_perturbation_touches_all_layers(self):
        stack = _stack(num_layers=3, init="small_random", seed=2)
        features = torch.rand(2, 8, generator=torch.Generator().manual_seed(5))
        baseline = [stack(features, i).clone() for i in range(3)]
        with torch.no_grad():
            stack.up.weight[0, 0] += 0.5
        assert all(
            not torch.equal(stack(features, i), baseline[i]) for i in range(3)
        )

    def test_tune_perturbation_is_layer_local(self):
        stack = _stack(num_layers=3, init="small_random", seed=2)
        features = torch.rand(2, 8, generator=torch.Generator().manual_seed(5))
        baseline = [stack(features, i).clone() for i in range(3)]
        with torch.no_grad():
            stack.tune[1].weight[0, 0] += 0.5
        assert torch.equal(stack(features, 0), baseline[0])
        assert not torch.equal(stack(features, 1), baseline[1])
        assert torch.equal(stack(features, 2), baseline[2])
