"""
Tests for greedy and beam decoding
"""
import logging

import numpy as np
import pytest

from htr.core.tensor import Tensor, no_grad
from htr.errors import ContractError
from htr.network.decoding import beam_decode, beam_search, decode, greedy_decode
from htr.network.model import HTRModel
from htr.text.codec import EOS_ID, SOS_ID


@pytest.fixture
def model(tiny_config, vocab):
    return HTRModel(tiny_config, len(vocab)).eval()


@pytest.fixture
def encoded(model, rng):
    with no_grad():
        return model.encode(Tensor(rng.uniform(size=(1, 1, 32, 64))), [64])


def rig_output(model, token):
    """Make `token` the argmax at every step"""
    model.tfdec.out.weight.data[...] = 0.0
    model.tfdec.out.bias.data[...] = 0.0
    model.tfdec.out.bias.data[token] = 10.0


def test_greedy_stops_at_eos(model, encoded, vocab):
    """Test an immediate end of sequence"""
    rig_output(model, EOS_ID)

    tokens = greedy_decode(model, encoded, vocab)

    assert tokens.ids == (SOS_ID, EOS_ID)
    assert not tokens.truncated


def test_greedy_truncates_at_max_len(model, encoded, vocab, caplog):
    """Test the length limit and its warning"""
    rig_output(model, 5)

    with caplog.at_level(logging.WARNING):
        tokens = greedy_decode(model, encoded, vocab, max_len=4)

    assert tokens.ids == (SOS_ID, 5, 5, 5)
    assert tokens.truncated
    assert "max_len" in caplog.text


def test_decode_limits(model, encoded, vocab, rng):
    """Test max_len bounds and single-line batches"""
    with pytest.raises(ContractError):
        greedy_decode(model, encoded, vocab, max_len=1)
    with pytest.raises(ContractError):
        greedy_decode(model, encoded, vocab, max_len=17)
    with no_grad():
        pair = model.encode(Tensor(rng.uniform(size=(2, 1, 32, 64))))
    with pytest.raises(ContractError):
        greedy_decode(model, pair, vocab)
    with pytest.raises(ContractError):
        beam_search(model, encoded, vocab, width=0)


def test_width_one_beam_matches_greedy(model, encoded, vocab):
    """Test that a single beam follows the argmax path"""
    greedy = greedy_decode(model, encoded, vocab, max_len=6)
    beam = beam_decode(model, encoded, vocab, width=1, max_len=6)
    assert beam.ids == greedy.ids
    assert beam.truncated == greedy.truncated


def test_exhaustive_beam_scores_at_least_greedy(model, encoded, vocab):
    """Test that a beam as wide as the vocabulary never scores below greedy"""
    wide = beam_search(model, encoded, vocab, width=len(vocab), max_len=3)
    narrow = beam_search(model, encoded, vocab, width=1, max_len=3)
    assert wide[0].score >= narrow[0].score - 1e-9


def test_beam_results_are_sorted(model, encoded, vocab):
    """Test best-first ordering and sos prefixes"""
    hypotheses = beam_search(model, encoded, vocab, width=3, max_len=5)
    scores = [h.score for h in hypotheses]
    assert scores == sorted(scores, reverse=True)
    assert all(h.ids[0] == SOS_ID and len(h.ids) <= 5 for h in hypotheses)
    assert all(h.ids[-1] == EOS_ID for h in hypotheses if h.finished)


def test_decode_dispatch(model, encoded, vocab):
    """Test that width 1 is greedy and wider widths use the beam"""
    rig_output(model, EOS_ID)
    assert decode(model, encoded, vocab).ids == (SOS_ID, EOS_ID)
    assert decode(model, encoded, vocab, beam_width=3).ids == (SOS_ID, EOS_ID)


def test_decoding_leaves_no_gradients(model, encoded, vocab):
    """Test that decoding records nothing"""
    greedy_decode(model, encoded, vocab, max_len=3)
    assert all(p.grad is None for p in model.parameters())
    assert not np.isnan(encoded.memory.data).any()


def sequence_log_prob(model, encoded, ids):
    total = 0.0
    for step in range(1, len(ids)):
        with no_grad():
            logits = model.decode_logits(np.array([ids[:step]]), encoded).data[0, -1].astype(np.float64)
        shifted = logits - logits.max()
        total += float(shifted[ids[step]] - np.log(np.exp(shifted).sum()))
    return total


def test_wide_beam_finds_the_best_normalized_sequence(model, encoded, vocab):
    """Test a beam wider than the search space against enumerating every sequence"""
    size = len(vocab)
    candidates = [(SOS_ID, EOS_ID)]
    candidates += [(SOS_ID, a, b) for a in range(size) if a != EOS_ID for b in range(size)]
    scored = {ids: sequence_log_prob(model, encoded, ids) / (len(ids) - 1) for ids in candidates}
    best = max(scored, key=scored.get)

    hypotheses = beam_search(model, encoded, vocab, width=len(candidates) + 1, max_len=3)

    assert hypotheses[0].ids == best
    assert hypotheses[0].score == pytest.approx(scored[best], abs=1e-9)
    assert {h.ids for h in hypotheses} == set(candidates)
