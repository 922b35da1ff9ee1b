from htr.text.codec import (
    EOS_ID,
    PAD_ID,
    SOS_ID,
    UNK_ID,
    TokenSeq,
    Vocab,
    build_vocab,
    decode,
    encode,
    normalize_text,
)

__all__ = [
    "EOS_ID",
    "PAD_ID",
    "SOS_ID",
    "UNK_ID",
    "TokenSeq",
    "Vocab",
    "build_vocab",
    "decode",
    "encode",
    "normalize_text",
]
