"""
Tests for the gradient verification suite
"""
import numpy as np

from htr.core.gradcheck import grad_check
from htr.core.tensor import Tape, Tensor, precision
from htr.text.codec import EOS_ID, PAD_ID, SOS_ID, UNK_ID
from htr.verification import (
    CASE_NAMES,
    TOLERANCE,
    GradCheckResult,
    encoder_decoder_micro,
    run_gradcheck_suite,
)


def test_every_case_passes():
    """Test one random point per case"""
    results = run_gradcheck_suite(seed=0, points=1)

    assert [r.name for r in results] == list(CASE_NAMES)
    failed = {r.name: r.max_error for r in results if not r.passed}
    assert failed == {}


def test_case_selection():
    """Test running a subset"""
    results = run_gradcheck_suite(points=2, names=["softmax", "encoder_decoder_micro"])
    assert [r.name for r in results] == ["softmax", "encoder_decoder_micro"]


def test_covers_the_differentiable_ops():
    """Test that each op and the composite have a case"""
    for name in ("conv2d", "maxpool2d", "batchnorm2d_train", "batchnorm2d_eval", "layer_norm",
                 "cross_entropy_masked", "multi_head_attention", "embedding_lookup"):
        assert name in CASE_NAMES


def test_result_threshold():
    """Test the pass criterion"""
    assert GradCheckResult("x", 5e-5, 1e-4, 0.1).passed
    assert not GradCheckResult("x", 1e-4, 1e-4, 0.1).passed


def test_micro_model_differentiates_embedding_and_attention():
    """Test that the composite case reaches the token embedding and an attention projection"""
    f, inputs = encoder_decoder_micro(np.random.default_rng(0))
    with precision(np.float64):
        tensors = [Tensor(array, requires_grad=True) for array in inputs]
        with Tape() as tape:
            loss = f(tensors)
        tape.backward(loss)

    _, _, embedding, query = tensors
    assert embedding.shape == (6, 8) and query.shape == (8, 8)
    for tensor in tensors:
        assert tensor.grad is not None and np.abs(tensor.grad).max() > 0
    np.testing.assert_array_equal(embedding.grad[[PAD_ID, EOS_ID, UNK_ID]], 0.0)
    assert (np.abs(embedding.grad[[SOS_ID, 4, 5]]).max(axis=1) > 0).all()
    assert grad_check(f, inputs) < TOLERANCE
