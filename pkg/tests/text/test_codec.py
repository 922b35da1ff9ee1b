"""
Tests for the character vocabulary and tokenizer
"""
import random

import pytest

from htr.errors import ContractError
from htr.text.codec import (
    EOS_ID,
    N_SPECIAL,
    PAD_ID,
    REPLACEMENT_CHAR,
    SOS_ID,
    UNK_ID,
    Vocab,
    build_vocab,
    decode,
    encode,
    normalize_text,
    strip_specials,
)


def test_normalize_text():
    """Test NFC composition and whitespace collapsing"""
    assert normalize_text("  á \t b\n") == "á b"
    assert normalize_text("سلام    دنیا") == "سلام دنیا"


def test_build_vocab_is_sorted_and_offset():
    """Test code-point order after the four special tokens"""
    vocab = build_vocab(["بب ا", "پ"])
    assert vocab.id_to_char == (" ", "ا", "ب", "پ")
    assert vocab.char_to_id["ا"] == N_SPECIAL + 1
    assert len(vocab) == N_SPECIAL + 4


def test_combining_marks_are_separate_tokens():
    """Test that a diacritic gets its own id"""
    vocab = build_vocab(["\u0628\u0650"])
    assert len(vocab.id_to_char) == 2


def test_encode_wraps_with_sos_and_eos():
    """Test framing and unknown characters"""
    vocab = build_vocab(["سلام"])
    tokens = encode(vocab, "سلا x")
    assert tokens.ids[0] == SOS_ID and tokens.ids[-1] == EOS_ID
    assert tokens.ids.count(UNK_ID) == 2
    assert len(tokens) == 7


def test_decode_round_trip():
    """Test that known text decodes to itself"""
    vocab = build_vocab(["ہم نے دیکھا"])
    assert decode(vocab, encode(vocab, "دیکھا ہم")) == "دیکھا ہم"


def test_decode_rules():
    """Test stop at eos, skipped pad/sos and replacement for unknown ids"""
    vocab = build_vocab(["ab"])
    a, b = vocab.char_to_id["a"], vocab.char_to_id["b"]
    assert decode(vocab, [SOS_ID, a, PAD_ID, b, EOS_ID, a]) == "ab"
    assert decode(vocab, [a, UNK_ID, 99]) == "a" + REPLACEMENT_CHAR * 2
    assert decode(vocab, []) == ""


def test_vocab_validation():
    """Test uniqueness and single-character entries"""
    with pytest.raises(ContractError):
        Vocab(("a", "a"))
    with pytest.raises(ContractError):
        Vocab(("ab",))
    with pytest.raises(ContractError):
        build_vocab([])


def test_vocab_save_and_load(tmp_path):
    """Test the one-character-per-line file"""
    vocab = build_vocab(["اردو زبان"])
    path = tmp_path / "vocab.txt"
    vocab.save(path)
    assert Vocab.load(path) == vocab


def test_strip_specials():
    """Test removal of literal special markers"""
    assert strip_specials("<sos>abc<eos><pad>") == "abc"


def test_random_strings_round_trip():
    """Test decode(encode(s)) on random strings over the vocabulary alphabet"""
    vocab = build_vocab(["بات پچ", "ٹوکری", "گھر"])
    alphabet = vocab.characters
    assert " " in alphabet
    rng = random.Random(7)
    for _ in range(100):
        s = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 15)))
        assert decode(vocab, encode(vocab, s)) == normalize_text(s)
