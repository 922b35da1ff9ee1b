"""
Autoregressive decoding over frozen weights.

Every step re-runs the decoder on the whole prefix. Each call owns its
decode state, so concurrent callers may share one model in eval mode.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from htr.core.tensor import no_grad
from htr.errors import ContractError
from htr.network.model import HTRModel
from htr.network.resnet import EncoderOutput
from htr.text.codec import EOS_ID, SOS_ID, TokenSeq, Vocab

logger = logging.getLogger(__name__)


def _check_limits(model: HTRModel, encoded: EncoderOutput, max_len: Optional[int]) -> int:
    limit = model.config.transformer.max_target_len
    max_len = limit if max_len is None else max_len
    if not 2 <= max_len <= limit:
        raise ContractError(f"max_len must lie in [2, {limit}], got {max_len}")
    if encoded.memory.shape[0] != 1:
        raise ContractError(f"decoding works on one line at a time, got batch {encoded.memory.shape[0]}")
    return max_len


def _last_logits(model: HTRModel, prefix: List[int], encoded: EncoderOutput) -> np.ndarray:
    with no_grad():
        logits = model.decode_logits(np.asarray([prefix], dtype=np.int64), encoded)
    return logits.data[0, -1].astype(np.float64)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    return shifted - np.log(np.exp(shifted).sum())


def greedy_decode(
    model: HTRModel, encoded: EncoderOutput, vocab: Vocab, max_len: Optional[int] = None
) -> TokenSeq:
    """Argmax of the last position until eos or `max_len` tokens (sos included)"""
    max_len = _check_limits(model, encoded, max_len)
    ids = [SOS_ID]
    while len(ids) < max_len:
        next_id = int(np.argmax(_last_logits(model, ids, encoded)))
        ids.append(next_id)
        if next_id == EOS_ID:
            break
    truncated = ids[-1] != EOS_ID
    if truncated:
        logger.warning("greedy decode hit max_len %d without eos", max_len)
    return TokenSeq(tuple(ids), truncated=truncated)


@dataclass(frozen=True)
class Hypothesis:
    ids: Tuple[int, ...]
    log_prob: float
    finished: bool

    @property
    def score(self) -> float:
        """Log-probability per generated token"""
        return self.log_prob / max(1, len(self.ids) - 1)


def beam_search(
    model: HTRModel, encoded: EncoderOutput, vocab: Vocab, width: int, max_len: Optional[int] = None
) -> List[Hypothesis]:
    """
    Length-normalized beam search; returns completed hypotheses best first.

    Each beam proposes its `width` highest-logit tokens (ties to the lower
    id), candidates are ranked by normalized score with a stable sort, and
    eos-terminated winners leave the beam. Width 1 follows greedy decoding
    token for token.
    """
    if width < 1:
        raise ContractError(f"beam width must be at least 1, got {width}")
    max_len = _check_limits(model, encoded, max_len)
    live = [Hypothesis((SOS_ID,), 0.0, False)]
    finished: List[Hypothesis] = []
    while live and len(finished) < width:
        candidates: List[Hypothesis] = []
        for hypothesis in live:
            logits = _last_logits(model, list(hypothesis.ids), encoded)
            log_probs = _log_softmax(logits)
            for token in np.argsort(-logits, kind="stable")[:width]:
                token = int(token)
                candidates.append(
                    Hypothesis(
                        hypothesis.ids + (token,),
                        hypothesis.log_prob + float(log_probs[token]),
                        token == EOS_ID,
                    )
                )
        candidates.sort(key=lambda h: -h.score)
        live = []
        for candidate in candidates[: width - len(finished)]:
            if candidate.finished or len(candidate.ids) >= max_len:
                finished.append(candidate)
            else:
                live.append(candidate)
    finished.extend(live)
    finished.sort(key=lambda h: -h.score)
    return finished


def beam_decode(
    model: HTRModel, encoded: EncoderOutput, vocab: Vocab, width: int, max_len: Optional[int] = None
) -> TokenSeq:
    best = beam_search(model, encoded, vocab, width, max_len)[0]
    if not best.finished:
        logger.warning("beam decode hit max_len without eos")
    return TokenSeq(best.ids, truncated=not best.finished)


def decode(
    model: HTRModel, encoded: EncoderOutput, vocab: Vocab, beam_width: int = 1, max_len: Optional[int] = None
) -> TokenSeq:
    if beam_width == 1:
        return greedy_decode(model, encoded, vocab, max_len)
    return beam_decode(model, encoded, vocab, beam_width, max_len)
