"""
Tests for attention, masks and the encoder-decoder stack
"""
import math

import numpy as np
import pytest

from htr.core.gradcheck import grad_check
from htr.core import ops
from htr.core.tensor import Tensor, no_grad, precision
from htr.errors import ContractError, DimensionError, MaskError
from htr.models.pydantic_models import TransformerConfig
from htr.network.transformer import (
    AttentionMask,
    MultiHeadAttention,
    TransformerDecoder,
    TransformerEncoder,
    positional_encoding,
)

CFG = TransformerConfig(d_model=8, n_heads=2, enc_layers=1, dec_layers=2, d_ff=16, dropout=0.0, max_target_len=6)


def test_positional_encoding_values():
    """Test sin on even and cos on odd dimensions"""
    table = positional_encoding(3, 4)
    np.testing.assert_allclose(table[0], [0.0, 1.0, 0.0, 1.0])
    assert math.isclose(table[1, 0], math.sin(1.0))
    assert math.isclose(table[2, 3], math.cos(2 * 10000 ** -0.5))
    with pytest.raises(ContractError):
        positional_encoding(3, 5)


def test_causal_mask_blocks_future_only():
    """Test the strict upper triangle"""
    blocked = AttentionMask.causal(4).blocked[0]
    assert blocked[0, 1] and not blocked[1, 0] and not blocked.diagonal().any()


def test_fully_blocked_row_is_rejected():
    """Test that a query with no visible key is an error"""
    with pytest.raises(MaskError):
        AttentionMask.padding(np.array([[True, True]]), query_length=2)
    with pytest.raises(DimensionError):
        AttentionMask("bad", np.zeros((1, 1, 2, 2), dtype=bool))


def test_attention_weights_respect_mask(rng):
    """Test zero weight on blocked keys and normalized rows"""
    mha = MultiHeadAttention(8, 2, rng)
    x = Tensor(rng.normal(size=(1, 4, 8)))

    out, weights = mha(x, x, x, AttentionMask.causal(4), return_weights=True)

    assert out.shape == (1, 4, 8)
    assert weights.shape == (1, 2, 4, 4)
    assert (weights[..., 0, 1:] == 0).all()
    np.testing.assert_allclose(weights.sum(axis=-1), 1.0, rtol=1e-5)


def test_attention_mask_shape_check(rng):
    """Test that a mask must fit the score matrix"""
    mha = MultiHeadAttention(8, 2, rng)
    x = Tensor(rng.normal(size=(1, 3, 8)))
    with pytest.raises(DimensionError):
        mha(x, x, x, AttentionMask.causal(4))
    with pytest.raises(ContractError):
        MultiHeadAttention(6, 4, rng)


def test_attention_gradient(rng):
    """Test attention gradients for query and key/value inputs"""
    mha = MultiHeadAttention(4, 2, np.random.default_rng(1))
    readout = rng.normal(size=(1, 3, 4))

    def f(t):
        return ops.sum(ops.mul(mha(t[0], t[1], t[1], AttentionMask.causal(3)), Tensor(readout, dtype=t[0].dtype)))

    assert grad_check(f, [rng.normal(size=(1, 3, 4)), rng.normal(size=(1, 3, 4))]) < 1e-4


def test_decoder_is_causal(rng):
    """Test that changing a later token leaves earlier logits unchanged"""
    decoder = TransformerDecoder(CFG, 7, rng, np.random.default_rng(1)).eval()
    memory = Tensor(rng.normal(size=(1, 5, 8)))
    with no_grad():
        first = decoder(np.array([[1, 4, 5, 6]]), memory).data
        second = decoder(np.array([[1, 4, 5, 3]]), memory).data
    np.testing.assert_array_equal(first[0, :3], second[0, :3])
    assert not np.allclose(first[0, 3], second[0, 3])


def test_decoder_ignores_padded_memory(rng):
    """Test that padded memory positions do not reach the output"""
    decoder = TransformerDecoder(CFG, 7, rng, np.random.default_rng(1)).eval()
    memory = rng.normal(size=(1, 5, 8))
    altered = memory.copy()
    altered[0, 3:] = rng.normal(size=(2, 8)) * 10
    pad = np.array([[False, False, False, True, True]])
    with no_grad():
        a = decoder(np.array([[1, 4]]), Tensor(memory), pad).data
        b = decoder(np.array([[1, 4]]), Tensor(altered), pad).data
    np.testing.assert_allclose(a, b, rtol=1e-5, atol=1e-6)


def test_encoder_ignores_padded_keys(rng):
    """Test that valid positions do not attend to padded positions"""
    encoder = TransformerEncoder(CFG, rng, np.random.default_rng(1)).eval()
    memory = rng.normal(size=(1, 4, 8))
    altered = memory.copy()
    altered[0, 3] = 5.0
    pad = np.array([[False, False, False, True]])
    with no_grad():
        a = encoder(Tensor(memory), pad).data
        b = encoder(Tensor(altered), pad).data
    np.testing.assert_allclose(a[0, :3], b[0, :3], rtol=1e-5, atol=1e-6)


def test_decoder_contract(rng):
    """Test sequence length and token id bounds"""
    decoder = TransformerDecoder(CFG, 7, rng, np.random.default_rng(1))
    memory = Tensor(rng.normal(size=(1, 5, 8)))
    with pytest.raises(ContractError):
        decoder(np.ones((1, 7), dtype=int), memory)
    with pytest.raises(ContractError):
        decoder(np.array([[1, 7]]), memory)
    with pytest.raises(DimensionError):
        decoder(np.ones((2, 3), dtype=int), memory)
    assert decoder(np.array([1, 4, 5]), memory).shape == (1, 3, 7)


def test_dropout_only_in_train_mode(rng):
    """Test that eval mode is deterministic and train mode is not"""
    cfg = TransformerConfig(d_model=8, n_heads=2, enc_layers=1, dec_layers=1, d_ff=16, dropout=0.5)
    encoder = TransformerEncoder(cfg, rng, np.random.default_rng(1))
    x = Tensor(rng.normal(size=(1, 4, 8)))
    with no_grad():
        assert not np.allclose(encoder(x).data, encoder(x).data)
        encoder.eval()
        np.testing.assert_array_equal(encoder(x).data, encoder(x).data)


def test_encoder_layers_are_permutation_equivariant():
    """Test that without positional encoding, permuting positions permutes outputs"""
    with precision(np.float64):
        rng = np.random.default_rng(8)
        encoder = TransformerEncoder(CFG, rng, np.random.default_rng(1)).eval()
        x = rng.normal(size=(1, 5, 8))
        order = np.array([3, 0, 4, 1, 2])

        def layers_only(inputs):
            out = Tensor(inputs)
            for layer in encoder.layers:
                out = layer(out)
            return out.data

        with no_grad():
            np.testing.assert_allclose(layers_only(x[:, order]), layers_only(x)[:, order], rtol=1e-10, atol=1e-12)
            positioned = encoder(Tensor(x[:, order])).data
            assert not np.allclose(positioned, encoder(Tensor(x)).data[:, order])
