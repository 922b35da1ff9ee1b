from htr.core.gradcheck import grad_check
from htr.core.module import Buffer, LayerNorm, Linear, Module, Parameter
from htr.core.tensor import (
    Tape,
    Tensor,
    backward,
    detect_anomaly,
    no_grad,
    precision,
)

__all__ = [
    "Buffer",
    "LayerNorm",
    "Linear",
    "Module",
    "Parameter",
    "Tape",
    "Tensor",
    "backward",
    "detect_anomaly",
    "grad_check",
    "no_grad",
    "precision",
]
