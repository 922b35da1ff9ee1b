"""
Edit-distance scoring of recognized text.

EditOps count the operations that turn the hypothesis into the reference:
`ins` adds a missing reference unit, `dele` removes an extra hypothesis unit,
`sub` swaps one for the other. Rates are 100 * (ins + sub + del) / n with n
the reference length.
"""
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from htr.errors import UndefinedDenominatorError
from htr.models.pydantic_models import CerReport, EditOps, SampleScore
from htr.text.codec import normalize_text, strip_specials


def _align(reference: Sequence, hypothesis: Sequence) -> EditOps:
    rows, cols = len(reference) + 1, len(hypothesis) + 1
    table = np.zeros((rows, cols), dtype=np.int64)
    table[:, 0] = np.arange(rows)
    table[0, :] = np.arange(cols)
    for i in range(1, rows):
        for j in range(1, cols):
            mismatch = int(reference[i - 1] != hypothesis[j - 1])
            table[i, j] = min(
                table[i - 1, j - 1] + mismatch,
                table[i, j - 1] + 1,
                table[i - 1, j] + 1,
            )

    # Backtrace tie order: substitution/match, then deletion, then insertion.
    ins = sub = dele = 0
    i, j = rows - 1, cols - 1
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            mismatch = int(reference[i - 1] != hypothesis[j - 1])
            if table[i, j] == table[i - 1, j - 1] + mismatch:
                sub += mismatch
                i, j = i - 1, j - 1
                continue
        if j > 0 and table[i, j] == table[i, j - 1] + 1:
            dele += 1
            j -= 1
            continue
        ins += 1
        i -= 1
    return EditOps(ins=ins, sub=sub, dele=dele)


def levenshtein(reference: str, hypothesis: str) -> EditOps:
    """Unit-cost character alignment of two already normalized strings"""
    return _align(reference, hypothesis)


def _prepare(text: str) -> str:
    return normalize_text(strip_specials(text))


def _rate(edits: EditOps, n: int, unit: str) -> float:
    if n == 0:
        raise UndefinedDenominatorError(f"{unit} error rate is undefined for an empty reference")
    return 100.0 * edits.total / n


def cer(reference: str, hypothesis: str) -> float:
    reference, hypothesis = _prepare(reference), _prepare(hypothesis)
    return _rate(levenshtein(reference, hypothesis), len(reference), "character")


def wer(reference: str, hypothesis: str) -> float:
    ref_words = _prepare(reference).split()
    hyp_words = _prepare(hypothesis).split()
    return _rate(_align(ref_words, hyp_words), len(ref_words), "word")


def score_sample(reference: str, hypothesis: str, source: Optional[str] = None) -> SampleScore:
    reference, hypothesis = _prepare(reference), _prepare(hypothesis)
    char_edits = levenshtein(reference, hypothesis)
    ref_words, hyp_words = reference.split(), hypothesis.split()
    word_edits = _align(ref_words, hyp_words)
    return SampleScore(
        reference=reference,
        hypothesis=hypothesis,
        char_edits=char_edits,
        n=len(reference),
        cer_percent=_rate(char_edits, len(reference), "character"),
        word_edits=word_edits,
        n_words=len(ref_words),
        wer_percent=_rate(word_edits, len(ref_words), "word"),
        source=source,
    )


def build_report(pairs: Iterable[Tuple[str, str]], sources: Optional[Sequence[str]] = None) -> CerReport:
    """Score (reference, hypothesis) pairs and aggregate micro and macro rates"""
    samples: List[SampleScore] = []
    for index, (reference, hypothesis) in enumerate(pairs):
        source = sources[index] if sources is not None else None
        samples.append(score_sample(reference, hypothesis, source=source))
    if not samples:
        return CerReport()

    char_edits = sum(s.char_edits.total for s in samples)
    word_edits = sum(s.word_edits.total for s in samples)
    return CerReport(
        samples=samples,
        corpus_cer=100.0 * char_edits / sum(s.n for s in samples),
        corpus_wer=100.0 * word_edits / sum(s.n_words for s in samples),
        macro_cer=float(np.mean([s.cer_percent for s in samples])),
        macro_wer=float(np.mean([s.wer_percent for s in samples])),
    )
