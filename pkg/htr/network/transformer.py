"""
Post-norm encoder-decoder transformer over image memory.

All activations are batched as [N, T, d_model]. Masks are boolean with
true meaning blocked.
"""
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np

from htr.core import ops
from htr.core.module import LayerNorm, Linear, Module, Parameter
from htr.core.tensor import Tensor
from htr.errors import ContractError, DimensionError, MaskError
from htr.models.pydantic_models import TransformerConfig


def positional_encoding(length: int, d_model: int) -> np.ndarray:
    """Sinusoidal table [length, d_model]: sin on even dims, cos on odd dims"""
    if d_model % 2:
        raise ContractError(f"positional encoding needs an even d_model, got {d_model}")
    positions = np.arange(length, dtype=np.float64)[:, None]
    rates = np.power(10000.0, -np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    table = np.zeros((length, d_model), dtype=np.float64)
    table[:, 0::2] = np.sin(positions * rates)
    table[:, 1::2] = np.cos(positions * rates)
    return table


def add_positions(x: Tensor) -> Tensor:
    n, length, d_model = x.shape
    table = positional_encoding(length, d_model).astype(x.dtype)
    return ops.add(x, Tensor.wrap(np.ascontiguousarray(np.broadcast_to(table, (n, length, d_model)))))


@dataclass(frozen=True)
class AttentionMask:
    """`blocked` is [N or 1, T_q, T_k]; no query row may be fully blocked"""

    kind: str
    blocked: np.ndarray

    def __post_init__(self):
        blocked = np.asarray(self.blocked, dtype=bool)
        if blocked.ndim == 2:
            blocked = blocked[None]
        if blocked.ndim != 3:
            raise DimensionError(f"attention mask must be [N, T_q, T_k], got {blocked.shape}")
        if blocked.shape[-1] and blocked.all(axis=-1).any():
            raise MaskError(f"{self.kind} mask blocks every key for at least one query")
        object.__setattr__(self, "blocked", blocked)

    @classmethod
    def causal(cls, length: int) -> "AttentionMask":
        """Blocks exactly the strict upper triangle"""
        return cls("causal", np.triu(np.ones((length, length), dtype=bool), k=1))

    @classmethod
    def padding(cls, key_pad: np.ndarray, query_length: int) -> "AttentionMask":
        key_pad = np.asarray(key_pad, dtype=bool)
        if key_pad.ndim == 1:
            key_pad = key_pad[None]
        blocked = np.repeat(key_pad[:, None, :], query_length, axis=1)
        return cls("padding", blocked)

    def combine(self, other: "AttentionMask") -> "AttentionMask":
        return AttentionMask("combined", np.logical_or(self.blocked, other.blocked))


class MultiHeadAttention(Module):
    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator):
        super().__init__()
        if d_model % n_heads:
            raise ContractError(f"d_model {d_model} is not divisible by {n_heads} heads")
        self.d_model = d_model
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.wq = Linear(d_model, d_model, rng)
        self.wk = Linear(d_model, d_model, rng)
        self.wv = Linear(d_model, d_model, rng)
        self.wo = Linear(d_model, d_model, rng)

    def _split(self, x: Tensor, axes: Tuple[int, ...]) -> Tensor:
        n, length, _ = x.shape
        return ops.transpose(ops.reshape(x, (n, length, self.n_heads, self.head_dim)), axes)

    def forward(
        self,
        query: Tensor,
        key: Tensor,
        value: Tensor,
        mask: Optional[AttentionMask] = None,
        return_weights: bool = False,
    ) -> Union[Tensor, Tuple[Tensor, np.ndarray]]:
        if query.ndim != 3 or key.ndim != 3 or key.shape != value.shape:
            raise DimensionError(
                f"attention expects [N, T, d] inputs, got {query.shape}, {key.shape}, {value.shape}"
            )
        n, q_len, _ = query.shape
        k_len = key.shape[1]
        q = self._split(self.wq(query), (0, 2, 1, 3))
        k = self._split(self.wk(key), (0, 2, 3, 1))
        v = self._split(self.wv(value), (0, 2, 1, 3))

        scores = ops.scale(ops.matmul(q, k), 1.0 / np.sqrt(self.head_dim))
        if mask is not None:
            blocked = mask.blocked
            if blocked.shape[1:] != (q_len, k_len) or blocked.shape[0] not in (1, n):
                raise DimensionError(f"mask {blocked.shape} does not fit scores [{n}, {q_len}, {k_len}]")
            scores = ops.masked_fill(scores, blocked[:, None, :, :], -np.inf)
        weights = ops.softmax(scores)
        heads = ops.matmul(weights, v)
        merged = ops.reshape(ops.transpose(heads, (0, 2, 1, 3)), (n, q_len, self.d_model))
        out = self.wo(merged)
        if return_weights:
            return out, weights.data
        return out


def multi_head_attention(
    attention: MultiHeadAttention, q: Tensor, k: Tensor, v: Tensor, mask: Optional[AttentionMask] = None
) -> Tensor:
    return attention(q, k, v, mask)


class FeedForward(Module):
    def __init__(self, d_model: int, d_ff: int, rng: np.random.Generator):
        super().__init__()
        self.inner = Linear(d_model, d_ff, rng)
        self.outer = Linear(d_ff, d_model, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.outer(ops.relu(self.inner(x)))


class EncoderLayer(Module):
    def __init__(self, cfg: TransformerConfig, rng: np.random.Generator, dropout_rng: np.random.Generator):
        super().__init__()
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, rng)
        self.norm1 = LayerNorm(cfg.d_model)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff, rng)
        self.norm2 = LayerNorm(cfg.d_model)
        self.p = cfg.dropout
        self.dropout_rng = dropout_rng

    def _drop(self, x: Tensor) -> Tensor:
        return ops.dropout(x, self.p, self.dropout_rng, self.training)

    def forward(self, x: Tensor, mask: Optional[AttentionMask] = None) -> Tensor:
        x = self.norm1(ops.add(x, self._drop(self.self_attn(x, x, x, mask))))
        return self.norm2(ops.add(x, self._drop(self.ff(x))))


class TransformerEncoder(Module):
    def __init__(self, cfg: TransformerConfig, rng: np.random.Generator, dropout_rng: np.random.Generator):
        super().__init__()
        self.layers: List[EncoderLayer] = [EncoderLayer(cfg, rng, dropout_rng) for _ in range(cfg.enc_layers)]

    def forward(self, memory: Tensor, pad_mask: Optional[np.ndarray] = None) -> Tensor:
        if pad_mask is not None and np.shape(pad_mask) != memory.shape[:2]:
            raise DimensionError(f"pad mask {np.shape(pad_mask)} does not match memory {memory.shape}")
        x = add_positions(memory)
        mask = None if pad_mask is None else AttentionMask.padding(pad_mask, memory.shape[1])
        for layer in self.layers:
            x = layer(x, mask)
        return x


class DecoderLayer(Module):
    def __init__(self, cfg: TransformerConfig, rng: np.random.Generator, dropout_rng: np.random.Generator):
        super().__init__()
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, rng)
        self.norm1 = LayerNorm(cfg.d_model)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, rng)
        self.norm2 = LayerNorm(cfg.d_model)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff, rng)
        self.norm3 = LayerNorm(cfg.d_model)
        self.p = cfg.dropout
        self.dropout_rng = dropout_rng

    def _drop(self, x: Tensor) -> Tensor:
        return ops.dropout(x, self.p, self.dropout_rng, self.training)

    def forward(
        self, x: Tensor, memory: Tensor, self_mask: AttentionMask, memory_mask: Optional[AttentionMask]
    ) -> Tensor:
        x = self.norm1(ops.add(x, self._drop(self.self_attn(x, x, x, self_mask))))
        x = self.norm2(ops.add(x, self._drop(self.cross_attn(x, memory, memory, memory_mask))))
        return self.norm3(ops.add(x, self._drop(self.ff(x))))


class TransformerDecoder(Module):
    """
    Token embedding (scaled by sqrt(d_model)) plus positions, decoder layers
    and a final affine map to vocabulary logits.
    """

    def __init__(
        self,
        cfg: TransformerConfig,
        vocab_size: int,
        rng: np.random.Generator,
        dropout_rng: np.random.Generator,
    ):
        super().__init__()
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.embedding = Parameter(rng.normal(0.0, cfg.d_model ** -0.5, size=(vocab_size, cfg.d_model)))
        self.layers: List[DecoderLayer] = [DecoderLayer(cfg, rng, dropout_rng) for _ in range(cfg.dec_layers)]
        # Small output gain keeps initial logits near uniform.
        self.out = Linear(cfg.d_model, vocab_size, rng, gain=cfg.d_model ** -0.5)

    def forward(self, tokens: np.ndarray, memory: Tensor, memory_pad: Optional[np.ndarray] = None) -> Tensor:
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim == 1:
            tokens = tokens[None]
        n, length = tokens.shape
        if length > self.cfg.max_target_len:
            raise ContractError(f"{length} tokens exceed max_target_len {self.cfg.max_target_len}")
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.vocab_size):
            raise ContractError(f"token ids must lie in [0, {self.vocab_size})")
        if memory.ndim != 3 or memory.shape[0] != n:
            raise DimensionError(f"memory {memory.shape} does not match {n} token rows")

        x = ops.scale(ops.embedding_lookup(self.embedding, tokens), np.sqrt(self.cfg.d_model))
        x = add_positions(x)
        self_mask = AttentionMask.causal(length)
        memory_mask = None
        if memory_pad is not None:
            memory_mask = AttentionMask.padding(memory_pad, length)
        for layer in self.layers:
            x = layer(x, memory, self_mask, memory_mask)
        return self.out(x)


def encoder_forward(encoder: TransformerEncoder, memory: Tensor, pad_mask: Optional[np.ndarray] = None) -> Tensor:
    return encoder(memory, pad_mask)


def decoder_forward(
    decoder: TransformerDecoder, tokens: np.ndarray, memory: Tensor, memory_pad: Optional[np.ndarray] = None
) -> Tensor:
    return decoder(tokens, memory, memory_pad)
