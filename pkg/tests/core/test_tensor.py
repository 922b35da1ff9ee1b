"""
Tests for the tensor and tape
"""
import numpy as np
import pytest

from htr.core import ops
from htr.core.tensor import Tape, Tensor, detect_anomaly, no_grad, precision
from htr.errors import ContractError, DimensionError, NonFiniteError


def test_tensor_rejects_zero_extent():
    """Test that every extent must be positive"""
    with pytest.raises(DimensionError):
        Tensor(np.zeros((2, 0)))


def test_default_dtype_and_precision():
    """Test float32 by default and float64 inside precision()"""
    assert Tensor([1.0, 2.0]).dtype == np.float32
    with precision(np.float64):
        assert Tensor([1.0, 2.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32


def test_ops_outside_tape_are_not_recorded():
    """Test that results carry no gradient requirement without an active tape"""
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = ops.scale(x, 3.0)
    assert y.requires_grad is False


def test_no_grad_suspends_recording():
    """Test that no_grad hides the active tape"""
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        with no_grad():
            ops.scale(x, 2.0)
    assert len(tape) == 0


def test_backward_accumulates_shared_inputs():
    """Test that a tensor used twice receives the sum of both gradients"""
    x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
    with Tape() as tape:
        loss = ops.sum(ops.add(x, x))
    tape.backward(loss)
    np.testing.assert_allclose(x.grad, [2.0, 2.0, 2.0])


def test_backward_chain_rule():
    """Test d/dx sum(x * x) = 2x"""
    x = Tensor([0.5, -1.5], requires_grad=True)
    with Tape() as tape:
        loss = ops.sum(ops.mul(x, x))
    tape.backward(loss)
    np.testing.assert_allclose(x.grad, [1.0, -3.0])


def test_backward_needs_scalar_loss():
    """Test that backward from a non-scalar fails"""
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = ops.scale(x, 2.0)
    with pytest.raises(ContractError):
        tape.backward(y)


def test_backward_needs_recorded_loss():
    """Test that a loss produced outside the tape is rejected"""
    x = Tensor([1.0, 2.0], requires_grad=True)
    loss = ops.sum(x)
    with pytest.raises(ContractError):
        Tape().backward(loss)


def test_item_needs_single_element():
    """Test item() on scalars and vectors"""
    assert Tensor(3.5).item() == 3.5
    with pytest.raises(ContractError):
        Tensor([1.0, 2.0]).item()


def test_operator_sugar():
    """Test +, * and @ dispatch to the ops"""
    a = Tensor([[1.0, 2.0]])
    b = Tensor([[3.0], [4.0]])
    np.testing.assert_allclose((a @ b).data, [[11.0]])
    np.testing.assert_allclose((a + a).data, [[2.0, 4.0]])
    np.testing.assert_allclose((a * 2).data, [[2.0, 4.0]])


def test_detect_anomaly_flags_non_finite_outputs():
    """Test that anomaly mode aborts on an op producing Inf"""
    x = Tensor([np.finfo(np.float32).max], requires_grad=True)
    with detect_anomaly():
        with pytest.raises(NonFiniteError):
            ops.scale(x, 10.0)
    # Without anomaly detection the overflow passes through
    with detect_anomaly(False):
        assert np.isinf(ops.scale(x, 10.0).data).all()


def test_detect_anomaly_allows_masked_infinity():
    """Test that masked_fill with -inf is not an anomaly"""
    x = Tensor([1.0, 2.0])
    with detect_anomaly():
        out = ops.masked_fill(x, np.array([True, False]), -np.inf)
    assert out.data[0] == -np.inf
