"""
Central-difference verification of recorded gradients
"""
from typing import Callable, List, Sequence

import numpy as np

from htr.core.tensor import Tape, Tensor, no_grad, precision
from htr.errors import ContractError

DifferentiableFn = Callable[[Sequence[Tensor]], Tensor]


def grad_check(f: DifferentiableFn, inputs: Sequence[np.ndarray], eps: float = 1e-6) -> float:
    """
    Compare tape gradients of scalar `f` with central differences.

    Runs in float64. The relative error of every coordinate uses
    max(1, |analytic|, |numeric|) as denominator; the maximum is returned.
    Callers keep inputs away from non-differentiable kinks.
    """
    with precision(np.float64):
        tensors = [Tensor(array, requires_grad=True) for array in inputs]
        with Tape() as tape:
            loss = f(tensors)
        if loss.shape != ():
            raise ContractError(f"grad_check needs a scalar function, got shape {loss.shape}")
        tape.backward(loss)
        analytic: List[np.ndarray] = [
            t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors
        ]

        worst = 0.0
        with no_grad():
            for index, tensor in enumerate(tensors):
                flat = tensor.data.reshape(-1)
                flat_grad = analytic[index].reshape(-1)
                for coordinate in range(flat.size):
                    original = flat[coordinate]
                    flat[coordinate] = original + eps
                    upper = f(tensors).item()
                    flat[coordinate] = original - eps
                    lower = f(tensors).item()
                    flat[coordinate] = original
                    numeric = (upper - lower) / (2 * eps)
                    exact = float(flat_grad[coordinate])
                    denominator = max(1.0, abs(exact), abs(numeric))
                    worst = max(worst, abs(exact - numeric) / denominator)
    return worst
