"""
Differentiable operations over `Tensor`.

Every op validates shapes, computes its forward result with numpy and hands
a backward rule to `record`. Broadcasting is limited to bias-add and scalar
scaling; everything else needs exactly matching shapes.
"""
from typing import Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from htr.core.tensor import Tensor, record
from htr.errors import (
    ContractError,
    DegenerateStatisticsError,
    DimensionError,
    EmptyLossError,
)


def _window_extent(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes must match exactly"""
    if a.ndim < 2 or a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul cannot combine shapes {a.shape} and {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(grad: np.ndarray):
        grad_a = np.matmul(grad, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        grad_b = np.matmul(np.swapaxes(a.data, -1, -2), grad) if b.requires_grad else None
        return grad_a, grad_b

    return record("matmul", out, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map x[..., i] · W[i, o] + b[o]"""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"linear cannot apply weight {weight.shape} to input {x.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise DimensionError(f"linear bias {bias.shape} does not match weight {weight.shape}")
    out = np.matmul(x.data, weight.data)
    if bias is not None:
        out = out + bias.data
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(grad: np.ndarray):
        flat_grad = grad.reshape(-1, weight.shape[1])
        grad_x = np.matmul(grad, weight.data.T) if x.requires_grad else None
        grad_w = x.data.reshape(-1, weight.shape[0]).T @ flat_grad if weight.requires_grad else None
        if bias is None:
            return grad_x, grad_w
        return grad_x, grad_w, flat_grad.sum(axis=0) if bias.requires_grad else None

    return record("linear", out, inputs, backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; `b` may also be a bias vector over the last axis of `a`"""
    is_bias = b.ndim == 1 and a.ndim > 1 and b.shape[0] == a.shape[-1]
    if a.shape != b.shape and not is_bias:
        raise DimensionError(f"add cannot combine shapes {a.shape} and {b.shape}")
    out = a.data + b.data

    def backward(grad: np.ndarray):
        grad_b = None
        if b.requires_grad:
            grad_b = grad.reshape(-1, b.shape[0]).sum(axis=0) if is_bias and a.shape != b.shape else grad
        return grad, grad_b

    return record("add", out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"mul cannot combine shapes {a.shape} and {b.shape}")
    out = a.data * b.data

    def backward(grad: np.ndarray):
        return (grad * b.data if a.requires_grad else None, grad * a.data if b.requires_grad else None)

    return record("mul", out, (a, b), backward)


def scale(x: Tensor, factor: float) -> Tensor:
    factor = x.dtype.type(factor)
    out = x.data * factor

    def backward(grad: np.ndarray):
        return (grad * factor,)

    return record("scale", out, (x,), backward)


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    """Sum of every element, as a scalar"""
    out = np.asarray(x.data.sum(), dtype=x.dtype)

    def backward(grad: np.ndarray):
        return (np.broadcast_to(grad, x.shape).astype(x.dtype),)

    return record("sum", out, (x,), backward)


def relu(x: Tensor) -> Tensor:
    passes = x.data > 0
    out = np.where(passes, x.data, x.dtype.type(0))

    def backward(grad: np.ndarray):
        return (np.where(passes, grad, 0).astype(grad.dtype),)

    return record("relu", out, (x,), backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {x.shape} into {tuple(shape)}") from exc

    def backward(grad: np.ndarray):
        return (grad.reshape(x.shape),)

    return record("reshape", out, (x,), backward)


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"transpose axes {axes} do not permute shape {x.shape}")
    out = np.transpose(x.data, axes)
    inverse = tuple(np.argsort(axes))

    def backward(grad: np.ndarray):
        return (np.transpose(grad, inverse),)

    return record("transpose", out, (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    reference = tensors[0].shape
    axis = axis % len(reference)
    for tensor in tensors[1:]:
        if len(tensor.shape) != len(reference) or any(
            tensor.shape[i] != reference[i] for i in range(len(reference)) if i != axis
        ):
            raise DimensionError(
                f"concat along axis {axis} cannot combine shapes {[t.shape for t in tensors]}"
            )
    out = np.concatenate([t.data for t in tensors], axis=axis)
    boundaries = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(grad: np.ndarray):
        return tuple(np.split(grad, boundaries, axis=axis))

    return record("concat", out, tuple(tensors), backward)


def masked_fill(x: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where `mask` is true; `mask` broadcasts to `x`"""
    try:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    except ValueError as exc:
        raise DimensionError(f"mask of shape {np.shape(mask)} cannot cover {x.shape}") from exc
    out = np.where(mask, x.dtype.type(value), x.data)

    def backward(grad: np.ndarray):
        return (np.where(mask, 0, grad).astype(grad.dtype),)

    return record("masked_fill", out, (x,), backward, allow_inf=True)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis with max-subtraction"""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    out = exp / exp.sum(axis=-1, keepdims=True)

    def backward(grad: np.ndarray):
        return (out * (grad - (grad * out).sum(axis=-1, keepdims=True)),)

    return record("softmax", out, (x,), backward)


def dropout(x: Tensor, p: float, rng: np.random.Generator, training: bool) -> Tensor:
    if not training or p <= 0.0:
        return x
    if p >= 1.0:
        raise ContractError(f"dropout probability must be below 1, got {p}")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1.0 - p)
    out = x.data * keep

    def backward(grad: np.ndarray):
        return (grad * keep,)

    return record("dropout", out, (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis then apply the affine map"""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm affine {gamma.shape}/{beta.shape} does not match input {x.shape}")
    if eps <= 0:
        raise ContractError(f"layer_norm eps must be positive, got {eps}")
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    normalized = centered * inv_std
    out = normalized * gamma.data + beta.data

    def backward(grad: np.ndarray):
        flat_grad = grad.reshape(-1, d)
        grad_gamma = (flat_grad * normalized.reshape(-1, d)).sum(axis=0) if gamma.requires_grad else None
        grad_beta = flat_grad.sum(axis=0) if beta.requires_grad else None
        grad_x = None
        if x.requires_grad:
            g_hat = grad * gamma.data
            grad_x = inv_std * (
                g_hat
                - g_hat.mean(axis=-1, keepdims=True)
                - normalized * (g_hat * normalized).mean(axis=-1, keepdims=True)
            )
        return grad_x, grad_gamma, grad_beta

    return record("layer_norm", out, (x, gamma, beta), backward)


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: Tensor,
    running_var: Tensor,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """
    Per-channel normalization of [N, C, H, W].

    Train mode uses batch statistics and folds them into the running state
    (unbiased variance, exponential moving average). Eval mode reads the
    running state only.
    """
    if x.ndim != 4:
        raise DimensionError(f"batchnorm2d expects [N, C, H, W], got {x.shape}")
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise DimensionError(f"batchnorm2d affine {gamma.shape} does not match {channels} channels")
    if eps <= 0:
        raise ContractError(f"batchnorm2d eps must be positive, got {eps}")
    axes = (0, 2, 3)
    count = x.shape[0] * x.shape[2] * x.shape[3]
    shape = (1, channels, 1, 1)

    if training:
        if count < 2:
            raise DegenerateStatisticsError(
                f"batchnorm2d in train mode needs at least 2 values per channel, got {count}"
            )
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean.data[...] = (1 - momentum) * running_mean.data + momentum * mean
        running_var.data[...] = (1 - momentum) * running_var.data + momentum * var * count / (count - 1)
    else:
        mean = running_mean.data.astype(x.dtype)
        var = running_var.data.astype(x.dtype)

    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype).reshape(shape)
    normalized = (x.data - mean.reshape(shape).astype(x.dtype)) * inv_std
    out = normalized * gamma.data.reshape(shape) + beta.data.reshape(shape)

    def backward(grad: np.ndarray):
        grad_gamma = (grad * normalized).sum(axis=axes) if gamma.requires_grad else None
        grad_beta = grad.sum(axis=axes) if beta.requires_grad else None
        grad_x = None
        if x.requires_grad:
            g_hat = grad * gamma.data.reshape(shape)
            if training:
                grad_x = inv_std * (
                    g_hat
                    - g_hat.mean(axis=axes, keepdims=True)
                    - normalized * (g_hat * normalized).mean(axis=axes, keepdims=True)
                )
            else:
                grad_x = g_hat * inv_std
        return grad_x, grad_gamma, grad_beta

    return record("batchnorm2d", out, (x, gamma, beta), backward)


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """Cross-correlation of [N, C, H, W] with [F, C, kh, kw], zero padding"""
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"conv2d cannot apply weight {weight.shape} to input {x.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise DimensionError(f"conv2d bias {bias.shape} does not match {weight.shape[0]} filters")
    if stride < 1 or padding < 0:
        raise ContractError(f"conv2d needs stride >= 1 and padding >= 0, got {stride}/{padding}")
    n, c, h, w = x.shape
    f, _, kh, kw = weight.shape
    out_h = _window_extent(h, kh, stride, padding)
    out_w = _window_extent(w, kw, stride, padding)
    if out_h < 1 or out_w < 1:
        raise DimensionError(
            f"conv2d kernel {kh}x{kw} (stride {stride}, padding {padding}) leaves no output for input {h}x{w}"
        )

    padded = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    # [N, C, out_h, out_w, kh, kw]
    columns = sliding_window_view(padded, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :out_h, :out_w]
    out = np.tensordot(columns, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, f, 1, 1)
    out = np.ascontiguousarray(out)
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(grad: np.ndarray):
        grad_w = (
            np.tensordot(grad, columns, axes=([0, 2, 3], [0, 2, 3])) if weight.requires_grad else None
        )
        grad_x = None
        if x.requires_grad:
            grad_padded = np.zeros_like(padded)
            row_end = stride * (out_h - 1) + 1
            col_end = stride * (out_w - 1) + 1
            for i in range(kh):
                for j in range(kw):
                    contribution = np.tensordot(grad, weight.data[:, :, i, j], axes=([1], [0]))
                    grad_padded[:, :, i : i + row_end : stride, j : j + col_end : stride] += (
                        contribution.transpose(0, 3, 1, 2)
                    )
            grad_x = grad_padded[:, :, padding : padding + h, padding : padding + w]
        if bias is None:
            return grad_x, grad_w
        return grad_x, grad_w, grad.sum(axis=(0, 2, 3)) if bias.requires_grad else None

    return record("conv2d", out, inputs, backward)


def maxpool2d(x: Tensor, kernel: int, stride: int, padding: int = 0) -> Tensor:
    """
    Windowed maximum over [N, C, H, W].

    Backward routes each window's gradient to the first maximal position in
    row-major window order.
    """
    if x.ndim != 4:
        raise DimensionError(f"maxpool2d expects [N, C, H, W], got {x.shape}")
    if stride < 1:
        raise ContractError(f"maxpool2d needs stride >= 1, got {stride}")
    if padding > kernel // 2:
        raise ContractError(f"maxpool2d padding {padding} exceeds half the kernel {kernel}")
    n, c, h, w = x.shape
    out_h = _window_extent(h, kernel, stride, padding)
    out_w = _window_extent(w, kernel, stride, padding)
    if out_h < 1 or out_w < 1:
        raise DimensionError(
            f"maxpool2d window {kernel} (stride {stride}, padding {padding}) leaves no output for input {h}x{w}"
        )
    padded = np.pad(
        x.data,
        ((0, 0), (0, 0), (padding, padding), (padding, padding)),
        constant_values=-np.inf,
    )
    windows = sliding_window_view(padded, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.ascontiguousarray(windows[:, :, :out_h, :out_w].max(axis=(-2, -1)))

    def backward(grad: np.ndarray):
        grad_padded = np.zeros_like(padded)
        claimed = np.zeros(out.shape, dtype=bool)
        row_end = stride * (out_h - 1) + 1
        col_end = stride * (out_w - 1) + 1
        for i in range(kernel):
            for j in range(kernel):
                window = (slice(None), slice(None), slice(i, i + row_end, stride), slice(j, j + col_end, stride))
                hit = (padded[window] == out) & ~claimed
                claimed |= hit
                grad_padded[window] += np.where(hit, grad, 0)
        return (grad_padded[:, :, padding : padding + h, padding : padding + w],)

    return record("maxpool2d", out, (x,), backward)


def global_avgpool(x: Tensor) -> Tensor:
    """Mean over H and W: [N, C, H, W] -> [N, C]"""
    if x.ndim != 4:
        raise DimensionError(f"global_avgpool expects [N, C, H, W], got {x.shape}")
    area = x.shape[2] * x.shape[3]
    out = x.data.mean(axis=(2, 3))

    def backward(grad: np.ndarray):
        return (np.broadcast_to(grad[:, :, None, None] / area, x.shape).astype(grad.dtype),)

    return record("global_avgpool", out, (x,), backward)


def embedding_lookup(table: Tensor, ids: Union[np.ndarray, Sequence[int]]) -> Tensor:
    """Rows of `table` selected by integer `ids` (any shape)"""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise DimensionError(f"embedding table must be [V, d], got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractError(f"token ids must lie in [0, {table.shape[0]}), got range [{ids.min()}, {ids.max()}]")
    out = table.data[ids]

    def backward(grad: np.ndarray):
        grad_table = np.zeros_like(table.data)
        np.add.at(grad_table, ids.reshape(-1), grad.reshape(-1, table.shape[1]))
        return (grad_table,)

    return record("embedding_lookup", out, (table,), backward)


def cross_entropy_masked(logits: Tensor, targets: Union[np.ndarray, Sequence[int]], ignore_id: int) -> Tensor:
    """
    Mean negative log-likelihood over positions whose target is not `ignore_id`.

    `logits` is [..., V] and `targets` has the leading shape of `logits`.
    """
    targets = np.asarray(targets, dtype=np.int64)
    vocab = logits.shape[-1]
    if targets.shape != logits.shape[:-1]:
        raise DimensionError(f"targets {targets.shape} do not match logits {logits.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        raise ContractError(f"target ids must lie in [0, {vocab})")
    flat_logits = logits.data.reshape(-1, vocab)
    flat_targets = targets.reshape(-1)
    keep = flat_targets != ignore_id
    count = int(keep.sum())
    if count == 0:
        raise EmptyLossError("every target position is ignored")

    shifted = flat_logits - flat_logits.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(flat_targets.shape[0])
    picked = log_probs[rows, flat_targets]
    out = np.asarray(-(picked * keep).sum() / count, dtype=logits.dtype)

    def backward(grad: np.ndarray):
        probs = np.exp(log_probs)
        probs[rows, flat_targets] -= 1
        probs *= keep[:, None] / count
        return ((probs * grad).reshape(logits.shape).astype(logits.dtype),)

    return record("cross_entropy_masked", out, (logits,), backward)

