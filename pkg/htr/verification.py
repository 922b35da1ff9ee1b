"""
Finite-difference verification suite over every differentiable op and a
micro encoder-decoder composite.
"""
import logging
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence

import numpy as np

from htr.core import ops
from htr.core.gradcheck import grad_check
from htr.core.tensor import Tensor, precision
from htr.models.pydantic_models import TransformerConfig
from htr.network.transformer import AttentionMask, MultiHeadAttention, TransformerDecoder, TransformerEncoder
from htr.text.codec import EOS_ID, PAD_ID, SOS_ID

logger = logging.getLogger(__name__)

TOLERANCE = 1e-4


@dataclass(frozen=True)
class GradCheckResult:
    name: str
    max_error: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


Case = Callable[[np.random.Generator], tuple]


def _away_from_zero(rng: np.random.Generator, shape, margin: float = 0.1) -> np.ndarray:
    """Values with |x| >= margin, for ops with a kink at zero"""
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(margin, 1.0, size=shape)


def _distinct(rng: np.random.Generator, shape) -> np.ndarray:
    """Values at least 1e-3 apart so window maxima are unique"""
    size = int(np.prod(shape))
    return (rng.permutation(size) * 1e-2 + rng.uniform(0, 1e-3, size)).reshape(shape) - size * 5e-3


def _readout(out: Tensor, seed: int) -> Tensor:
    """Scalar projection of `out` with fixed weights"""
    weights = np.random.default_rng(seed).normal(size=out.shape)
    return ops.sum(ops.mul(out, Tensor(weights)))


def encoder_decoder_micro(rng: np.random.Generator) -> tuple:
    """
    One-layer encoder-decoder (d_model 8, T=3) under teacher forcing.

    The differentiated inputs are the encoder memory, the output projection,
    the token embedding and the query projection of the decoder's cross
    attention; every other parameter stays fixed.
    """
    cfg = TransformerConfig(d_model=8, n_heads=2, enc_layers=1, dec_layers=1, d_ff=16, dropout=0.0, max_target_len=8)
    init = np.random.default_rng(22)
    dropout_rng = np.random.default_rng(23)
    encoder = TransformerEncoder(cfg, init, dropout_rng)
    decoder = TransformerDecoder(cfg, 6, init, dropout_rng)
    tokens = np.array([[SOS_ID, 4, 5]])
    targets = np.array([[4, 5, EOS_ID]])

    def f(t):
        decoder.out.weight = t[1]
        decoder.embedding = t[2]
        decoder.layers[0].cross_attn.wq.weight = t[3]
        memory = encoder(t[0])
        return ops.cross_entropy_masked(decoder(tokens, memory), targets, ignore_id=PAD_ID)

    return f, [
        rng.normal(size=(1, 4, 8)),
        rng.normal(scale=0.3, size=(8, 6)),
        rng.normal(scale=8 ** -0.5, size=(6, 8)),
        rng.normal(scale=0.3, size=(8, 8)),
    ]


def _cases() -> Dict[str, Case]:
    cases: Dict[str, Case] = {}

    cases["matmul"] = lambda rng: (
        lambda t: _readout(ops.matmul(t[0], t[1]), 1),
        [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))],
    )
    cases["linear"] = lambda rng: (
        lambda t: _readout(ops.linear(t[0], t[1], t[2]), 2),
        [rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5)), rng.normal(size=5)],
    )
    cases["add"] = lambda rng: (
        lambda t: _readout(ops.add(t[0], t[1]), 3),
        [rng.normal(size=(3, 4)), rng.normal(size=(3, 4))],
    )
    cases["add_bias"] = lambda rng: (
        lambda t: _readout(ops.add(t[0], t[1]), 4),
        [rng.normal(size=(2, 3, 4)), rng.normal(size=4)],
    )
    cases["mul"] = lambda rng: (
        lambda t: _readout(ops.mul(t[0], t[1]), 5),
        [rng.normal(size=(3, 4)), rng.normal(size=(3, 4))],
    )
    cases["scale"] = lambda rng: (lambda t: _readout(ops.scale(t[0], -1.7), 6), [rng.normal(size=(3, 4))])
    cases["sum"] = lambda rng: (lambda t: ops.sum(t[0]), [rng.normal(size=(3, 4))])
    cases["relu"] = lambda rng: (lambda t: _readout(ops.relu(t[0]), 7), [_away_from_zero(rng, (4, 5))])
    cases["reshape"] = lambda rng: (lambda t: _readout(ops.reshape(t[0], (6, 2)), 8), [rng.normal(size=(3, 4))])
    cases["transpose"] = lambda rng: (
        lambda t: _readout(ops.transpose(t[0], (2, 0, 1)), 9),
        [rng.normal(size=(2, 3, 4))],
    )
    cases["concat"] = lambda rng: (
        lambda t: _readout(ops.concat([t[0], t[1]], axis=1), 10),
        [rng.normal(size=(2, 3)), rng.normal(size=(2, 2))],
    )
    cases["masked_fill"] = lambda rng: (
        lambda t: _readout(ops.masked_fill(t[0], np.eye(4, dtype=bool), 0.0), 11),
        [rng.normal(size=(4, 4))],
    )
    cases["softmax"] = lambda rng: (lambda t: _readout(ops.softmax(t[0]), 12), [rng.normal(size=(3, 5))])
    cases["dropout"] = lambda rng: (
        lambda t: _readout(ops.dropout(t[0], 0.3, np.random.default_rng(13), training=True), 13),
        [rng.normal(size=(4, 6))],
    )
    cases["layer_norm"] = lambda rng: (
        lambda t: _readout(ops.layer_norm(t[0], t[1], t[2]), 14),
        [rng.normal(size=(3, 6)), rng.normal(size=6), rng.normal(size=6)],
    )

    def batchnorm(training: bool, seed: int) -> Case:
        def build(rng: np.random.Generator):
            running_mean = rng.normal(size=3)
            running_var = rng.uniform(0.5, 2.0, size=3)

            def f(t):
                return _readout(
                    ops.batchnorm2d(
                        t[0], t[1], t[2], Tensor(running_mean.copy()), Tensor(running_var.copy()), training=training
                    ),
                    seed,
                )

            return f, [rng.normal(size=(2, 3, 3, 4)), rng.normal(size=3), rng.normal(size=3)]

        return build

    cases["batchnorm2d_train"] = batchnorm(True, 15)
    cases["batchnorm2d_eval"] = batchnorm(False, 16)
    cases["conv2d"] = lambda rng: (
        lambda t: _readout(ops.conv2d(t[0], t[1], t[2], stride=2, padding=1), 17),
        [rng.normal(size=(2, 2, 6, 7)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)],
    )
    cases["maxpool2d"] = lambda rng: (
        lambda t: _readout(ops.maxpool2d(t[0], kernel=3, stride=2, padding=1), 18),
        [_distinct(rng, (1, 2, 6, 6))],
    )
    cases["global_avgpool"] = lambda rng: (
        lambda t: _readout(ops.global_avgpool(t[0]), 19),
        [rng.normal(size=(2, 3, 2, 4))],
    )
    cases["embedding_lookup"] = lambda rng: (
        lambda t: _readout(ops.embedding_lookup(t[0], [[0, 2, 2], [4, 1, 0]]), 20),
        [rng.normal(size=(5, 3))],
    )
    cases["cross_entropy_masked"] = lambda rng: (
        lambda t: ops.cross_entropy_masked(t[0], [[1, 0, 3], [2, 4, 0]], ignore_id=0),
        [rng.normal(size=(2, 3, 5))],
    )

    def attention(rng: np.random.Generator):
        mha = MultiHeadAttention(8, 2, np.random.default_rng(21))
        mask = AttentionMask.causal(3)
        return (
            lambda t: _readout(mha(t[0], t[1], t[1], mask), 21),
            [rng.normal(size=(1, 3, 8)), rng.normal(size=(1, 3, 8))],
        )

    cases["multi_head_attention"] = attention

    cases["encoder_decoder_micro"] = encoder_decoder_micro
    return cases


CASE_NAMES: Sequence[str] = tuple(_cases())


def run_gradcheck_suite(
    seed: int = 0,
    points: int = 10,
    tolerance: float = TOLERANCE,
    names: Sequence[str] = (),
) -> List[GradCheckResult]:
    """Check each case at `points` random double-precision inputs"""
    results: List[GradCheckResult] = []
    with precision(np.float64):
        cases = _cases()
        selected = names or tuple(cases)
        for index, name in enumerate(selected):
            build = cases[name]
            rng = np.random.default_rng([seed, index])
            started = time.perf_counter()
            worst = 0.0
            for _ in range(points):
                f, inputs = build(rng)
                worst = max(worst, grad_check(f, inputs))
            result = GradCheckResult(name, worst, tolerance, time.perf_counter() - started)
            logger.debug("gradcheck %s: %.3e in %.2fs", name, worst, result.seconds)
            results.append(result)
    return results
