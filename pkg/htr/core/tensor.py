"""
Dense tensor with a reverse-mode tape.

Operations in `htr.core.ops` record a `TapeNode` on the active `Tape` whenever
one of their inputs requires a gradient. `Tape.backward` then sweeps the
recorded nodes in reverse order and accumulates gradients into `.grad`.
"""
import contextlib
import logging
import os
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from htr.errors import ContractError, DimensionError, NonFiniteError

logger = logging.getLogger(__name__)

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_ACTIVE_TAPE: ContextVar[Optional["Tape"]] = ContextVar("htr_active_tape", default=None)
_DEFAULT_DTYPE: ContextVar[np.dtype] = ContextVar("htr_default_dtype", default=np.dtype(np.float32))
_DETECT_ANOMALY: ContextVar[bool] = ContextVar(
    "htr_detect_anomaly", default=os.getenv("HTR_DETECT_ANOMALY", "0") == "1"
)


def default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE.get()


@contextlib.contextmanager
def precision(dtype=np.float64) -> Iterator[None]:
    """Create new tensors in `dtype` (float64 is the gradient-check mode)"""
    token = _DEFAULT_DTYPE.set(np.dtype(dtype))
    try:
        yield
    finally:
        _DEFAULT_DTYPE.reset(token)


@contextlib.contextmanager
def detect_anomaly(enabled: bool = True) -> Iterator[None]:
    """Abort on the first op that produces a NaN or Inf"""
    token = _DETECT_ANOMALY.set(enabled)
    try:
        yield
    finally:
        _DETECT_ANOMALY.reset(token)


def anomaly_detection_enabled() -> bool:
    return _DETECT_ANOMALY.get()


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Run ops without recording them on any tape"""
    token = _ACTIVE_TAPE.set(None)
    try:
        yield
    finally:
        _ACTIVE_TAPE.reset(token)


def active_tape() -> Optional["Tape"]:
    return _ACTIVE_TAPE.get()


class Tensor:
    """
    N-dimensional array with an optional gradient slot.

    Extents must be positive; a scalar has shape ().
    """

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        array = np.array(data, dtype=dtype if dtype is not None else default_dtype())
        if any(extent <= 0 for extent in array.shape):
            raise DimensionError(f"tensor extents must be positive, got shape {array.shape}")
        self.data: np.ndarray = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None

    @classmethod
    def wrap(cls, array: np.ndarray) -> "Tensor":
        """Adopt an op result without copying or casting"""
        tensor = cls.__new__(cls)
        tensor.data = array
        tensor.requires_grad = False
        tensor.grad = None
        return tensor

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor.wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def check_finite(self, where: str = "tensor") -> None:
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError(f"non-finite values in {where} of shape {self.shape}")

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # Operator sugar; the ops module is imported lazily to avoid a cycle.
    def __add__(self, other: "Tensor") -> "Tensor":
        from htr.core import ops
        return ops.add(self, other)

    def __mul__(self, other) -> "Tensor":
        from htr.core import ops
        if isinstance(other, Tensor):
            return ops.mul(self, other)
        return ops.scale(self, float(other))

    __rmul__ = __mul__

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from htr.core import ops
        return ops.matmul(self, other)


@dataclass
class TapeNode:
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class Tape:
    """
    Ordered record of differentiable operations.

    Used as a context manager; ops executed inside the `with` block are
    recorded in execution order, which is a topological order by
    construction. A tape belongs to one training step.
    """

    def __init__(self):
        self.nodes: List[TapeNode] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, node: TapeNode) -> None:
        self.nodes.append(node)

    def backward(self, loss: Tensor) -> None:
        if loss.data.shape != ():
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")

        end = None
        for index in range(len(self.nodes) - 1, -1, -1):
            if self.nodes[index].output is loss:
                end = index
                break
        if end is None:
            raise ContractError("loss was not recorded on this tape")

        grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        owners: Dict[int, Tensor] = {id(loss): loss}

        for node in reversed(self.nodes[: end + 1]):
            upstream = grads.get(id(node.output))
            if upstream is None:
                continue
            input_grads = node.backward(upstream)
            for tensor, grad in zip(node.inputs, input_grads):
                if grad is None or not tensor.requires_grad:
                    continue
                if grad.shape != tensor.shape:
                    raise DimensionError(
                        f"{node.op} backward produced grad {grad.shape} for input {tensor.shape}"
                    )
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + grad
                else:
                    grads[key] = grad
                    owners[key] = tensor

        for key, grad in grads.items():
            tensor = owners[key]
            grad = grad.astype(tensor.dtype, copy=False)
            tensor.grad = grad if tensor.grad is None else tensor.grad + grad


def backward(tape: Tape, loss: Tensor) -> None:
    tape.backward(loss)


def record(
    op: str,
    out: np.ndarray,
    inputs: Sequence[Tensor],
    backward_fn: BackwardFn,
    allow_inf: bool = False,
) -> Tensor:
    """Wrap an op result and put it on the active tape if any input needs a gradient"""
    result = Tensor.wrap(out)
    if anomaly_detection_enabled() and not (allow_inf and not np.isnan(out).any()):
        result.check_finite(where=f"output of {op}")
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        result.requires_grad = True
        tape.record(TapeNode(op=op, inputs=tuple(inputs), output=result, backward=backward_fn))
    return result
