"""
Adam with bias correction and global-norm gradient clipping
"""
from dataclasses import dataclass, field
from typing import Dict, Iterable, Sequence, Tuple

import numpy as np

from htr.core.module import Parameter
from htr.models.pydantic_models import TrainConfig


@dataclass
class AdamState:
    """First and second moments keyed by parameter name, and the update count"""

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros(cls, params: Iterable[Tuple[str, Parameter]]) -> "AdamState":
        state = cls()
        for name, param in params:
            state.m[name] = np.zeros_like(param.data)
            state.v[name] = np.zeros_like(param.data)
        return state

    def copy(self) -> "AdamState":
        return AdamState(
            m={k: v.copy() for k, v in self.m.items()},
            v={k: v.copy() for k, v in self.v.items()},
            t=self.t,
        )


def global_grad_norm(params: Iterable[Parameter]) -> float:
    total = 0.0
    for param in params:
        if param.grad is not None:
            total += float(np.sum(param.grad.astype(np.float64) ** 2))
    return float(np.sqrt(total))


def clip_grad_norm(params: Sequence[Parameter], max_norm: float) -> float:
    """Rescale gradients in place so their global norm is at most `max_norm`; returns the norm before clipping"""
    norm = global_grad_norm(params)
    if norm > max_norm:
        factor = max_norm / (norm + 1e-6)
        for param in params:
            if param.grad is not None:
                param.grad = (param.grad * factor).astype(param.grad.dtype)
    return norm


def adam_step(
    params: Sequence[Tuple[str, Parameter]],
    state: AdamState,
    cfg: TrainConfig,
    learning_rate: float,
) -> None:
    """
    One in-place update: m and v are exponential moving averages of the
    gradient and its square, and the step is lr * m_hat / (sqrt(v_hat) + eps).
    Missing gradients count as zero.
    """
    state.t += 1
    correction1 = 1.0 - cfg.beta1 ** state.t
    correction2 = 1.0 - cfg.beta2 ** state.t
    for name, param in params:
        grad = param.grad if param.grad is not None else np.zeros_like(param.data)
        m = state.m.setdefault(name, np.zeros_like(param.data))
        v = state.v.setdefault(name, np.zeros_like(param.data))
        m[...] = cfg.beta1 * m + (1.0 - cfg.beta1) * grad
        v[...] = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad
        update = learning_rate * (m / correction1) / (np.sqrt(v / correction2) + cfg.adam_eps)
        param.data[...] = param.data - update.astype(param.dtype)
