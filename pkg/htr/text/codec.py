"""
Character-level vocabulary and tokenizer.

A character is one Unicode scalar value after NFC composition, so combining
marks are tokens of their own.
"""
import re
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple, Union

from htr.errors import ContractError

PAD_ID = 0
SOS_ID = 1
EOS_ID = 2
UNK_ID = 3
SPECIAL_TOKENS = ("<pad>", "<sos>", "<eos>", "<unk>")
N_SPECIAL = len(SPECIAL_TOKENS)
REPLACEMENT_CHAR = "\ufffd"

_WHITESPACE_RUN = re.compile(r"\s+")


def normalize_text(s: str) -> str:
    """NFC, interior whitespace runs collapsed to one space, ends trimmed"""
    return _WHITESPACE_RUN.sub(" ", unicodedata.normalize("NFC", s)).strip()


@dataclass(frozen=True)
class TokenSeq:
    """Vocabulary ids; `truncated` marks a decode that hit its length limit"""

    ids: Tuple[int, ...]
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)


@dataclass(frozen=True)
class Vocab:
    """Specials occupy ids 0-3; character i of `id_to_char` has id i + 4"""

    id_to_char: Tuple[str, ...]
    char_to_id: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.id_to_char)) != len(self.id_to_char):
            raise ContractError("vocabulary characters must be unique")
        for char in self.id_to_char:
            if len(char) != 1:
                raise ContractError(f"vocabulary entries must be single characters, got {char!r}")
        object.__setattr__(
            self, "char_to_id", {char: index + N_SPECIAL for index, char in enumerate(self.id_to_char)}
        )

    def __len__(self) -> int:
        return N_SPECIAL + len(self.id_to_char)

    @property
    def size(self) -> int:
        return len(self)

    @property
    def characters(self) -> str:
        return "".join(self.id_to_char)

    def save(self, path: Union[str, Path]) -> None:
        """One character per line, line number = id - 4"""
        Path(path).write_text("".join(f"{char}\n" for char in self.id_to_char), encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Vocab":
        text = Path(path).read_text(encoding="utf-8")
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(tuple(lines))


def build_vocab(corpus: Iterable[str]) -> Vocab:
    corpus = list(corpus)
    if not corpus:
        raise ContractError("cannot build a vocabulary from an empty corpus")
    characters = set()
    for line in corpus:
        characters.update(normalize_text(line))
    return Vocab(tuple(sorted(characters)))


def encode(vocab: Vocab, s: str) -> TokenSeq:
    """[sos] + character ids (unk for unseen) + [eos]"""
    ids: List[int] = [SOS_ID]
    ids.extend(vocab.char_to_id.get(char, UNK_ID) for char in normalize_text(s))
    ids.append(EOS_ID)
    return TokenSeq(tuple(ids))


def decode(vocab: Vocab, tokens: Union[TokenSeq, Sequence[int]]) -> str:
    """Characters up to the first eos; pad and sos dropped, unk shown as U+FFFD"""
    chars: List[str] = []
    for token in tokens:
        token = int(token)
        if token == EOS_ID:
            break
        if token in (PAD_ID, SOS_ID):
            continue
        if token == UNK_ID or not N_SPECIAL <= token < len(vocab):
            chars.append(REPLACEMENT_CHAR)
        else:
            chars.append(vocab.id_to_char[token - N_SPECIAL])
    return "".join(chars)


def strip_specials(s: str) -> str:
    """Remove literal special-token markers that may appear in rendered text"""
    for marker in SPECIAL_TOKENS:
        s = s.replace(marker, "")
    return s
