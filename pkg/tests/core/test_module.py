"""
Tests for the parameter containers
"""
import numpy as np
import pytest

from htr.core.module import Buffer, LayerNorm, Linear, Module, Parameter
from htr.errors import ContractError, DimensionError


class Stack(Module):
    def __init__(self, rng):
        super().__init__()
        self.layers = [Linear(3, 4, rng), Linear(4, 2, rng)]
        self.norm = LayerNorm(2)
        self.count = Buffer(np.zeros(1))
        self.label = "not a tensor"


def test_names_follow_assignment_order(rng):
    """Test hierarchical names with list indices"""
    names = [name for name, _ in Stack(rng).named_parameters()]
    assert names == [
        "layers.0.weight", "layers.0.bias",
        "layers.1.weight", "layers.1.bias",
        "norm.gamma", "norm.beta",
    ]


def test_state_dict_includes_buffers(rng):
    """Test that buffers are persisted after parameters"""
    state = Stack(rng).state_dict()
    assert list(state)[-1] == "count"
    assert isinstance(Stack(rng).count, Buffer)
    assert not isinstance(Stack(rng).count, Parameter)


def test_load_state_dict_round_trip(rng):
    """Test that loading copies values into another instance"""
    source, target = Stack(rng), Stack(np.random.default_rng(99))
    loaded = target.load_state_dict(source.state_dict())
    assert len(loaded) == 7
    np.testing.assert_array_equal(target.layers[1].weight.data, source.layers[1].weight.data)


def test_load_state_dict_strict_checks(rng):
    """Test missing names and shape mismatches"""
    model = Stack(rng)
    state = model.state_dict()
    del state["norm.beta"]
    with pytest.raises(ContractError):
        model.load_state_dict(state)
    assert "norm.beta" not in model.load_state_dict(state, strict=False)

    state = model.state_dict()
    state["norm.gamma"] = np.ones(5)
    with pytest.raises(DimensionError):
        model.load_state_dict(state)


def test_train_eval_propagates(rng):
    """Test that mode switches reach every sub-module"""
    model = Stack(rng).eval()
    assert all(not m.training for m in model.modules())
    model.train()
    assert all(m.training for m in model.modules())


def test_parameter_count(rng):
    """Test the total number of trainable scalars"""
    assert Stack(rng).parameter_count() == (3 * 4 + 4) + (4 * 2 + 2) + 2 + 2
