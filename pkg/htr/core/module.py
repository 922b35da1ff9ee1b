"""
Parameter containers for models built on the tensor engine
"""
from collections import OrderedDict
from typing import Dict, Iterator, List, Mapping, Tuple

import numpy as np

from htr.core import ops
from htr.core.tensor import Tensor
from htr.errors import ContractError, DimensionError


class Parameter(Tensor):
    """Trainable tensor"""

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


class Buffer(Tensor):
    """Persistent non-trainable state such as batchnorm running statistics"""

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=False, dtype=dtype)


class Module:
    """
    Base class for layers.

    Parameters, buffers and sub-modules are discovered from instance
    attributes in assignment order; lists of modules are named by index.
    """

    def __init__(self):
        self.training = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _members(self) -> Iterator[Tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (Tensor, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for index, child in enumerate(value):
                    yield f"{name}.{index}", child

    def named_children(self) -> Iterator[Tuple[str, "Module"]]:
        for name, value in self._members():
            if isinstance(value, Module):
                yield name, value

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, child in self.named_children():
            yield from child.modules()

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, value in self._members():
            if isinstance(value, Parameter):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix=f"{prefix}{name}.")

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, Buffer]]:
        for name, value in self._members():
            if isinstance(value, Buffer):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_buffers(prefix=f"{prefix}{name}.")

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def parameter_count(self) -> int:
        return int(np.sum([p.size for p in self.parameters()]))

    def train(self, mode: bool = True) -> "Module":
        for module in self.modules():
            module.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for parameter in self.parameters():
            parameter.zero_grad()

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, tensor in self.named_parameters():
            state[name] = tensor.data.copy()
        for name, tensor in self.named_buffers():
            state[name] = tensor.data.copy()
        return state

    def load_state_dict(self, state: Mapping[str, np.ndarray], strict: bool = True) -> List[str]:
        """Copy arrays into matching tensors; returns the names that were loaded"""
        own: Dict[str, Tensor] = dict(self.named_parameters())
        own.update(self.named_buffers())
        if strict:
            missing = sorted(set(own) - set(state))
            unexpected = sorted(set(state) - set(own))
            if missing or unexpected:
                raise ContractError(f"state mismatch: missing {missing}, unexpected {unexpected}")
        loaded = []
        for name, array in state.items():
            if name not in own:
                continue
            target = own[name]
            if tuple(np.shape(array)) != target.shape:
                raise DimensionError(f"{name}: stored shape {np.shape(array)} does not match {target.shape}")
            target.data[...] = array
            loaded.append(name)
        return loaded


class Linear(Module):
    """Affine map with Xavier-uniform weight and zero bias"""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, gain: float = 1.0):
        super().__init__()
        bound = gain * np.sqrt(6.0 / (in_features + out_features))
        self.weight = Parameter(rng.uniform(-bound, bound, size=(in_features, out_features)))
        self.bias = Parameter(np.zeros(out_features))

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta, self.eps)

