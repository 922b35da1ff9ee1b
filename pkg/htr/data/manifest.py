"""
Two-column TSV manifests: image path, tab, transcription. UTF-8, no header.
Relative image paths are resolved against the manifest's directory.
"""
import logging
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from htr.errors import ManifestParseError, TranscriptionLengthError
from htr.models.pydantic_models import ManifestEntry
from htr.text.codec import normalize_text

logger = logging.getLogger(__name__)


def load_manifest(path: Union[str, Path]) -> List[ManifestEntry]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    entries: List[ManifestEntry] = []
    with path.open(encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            columns = line.split("\t")
            if len(columns) != 2:
                raise ManifestParseError(str(path), line_number, f"expected 2 tab-separated columns, got {len(columns)}")
            image_name, transcription = columns
            transcription = normalize_text(transcription)
            if not image_name.strip():
                raise ManifestParseError(str(path), line_number, "empty image path")
            if not transcription:
                raise ManifestParseError(str(path), line_number, "empty transcription")
            image_path = Path(image_name)
            if not image_path.is_absolute():
                image_path = path.parent / image_path
            if not image_path.is_file():
                raise FileNotFoundError(f"{path}:{line_number}: image not found: {image_path}")
            entries.append(
                ManifestEntry(image_path=str(image_path), transcription=transcription, line_number=line_number)
            )
    logger.debug("loaded %d entries from %s", len(entries), path)
    return entries


def write_manifest(rows: Sequence[Tuple[str, str]], path: Union[str, Path]) -> None:
    """Write (image path, transcription) rows; paths are written as given"""
    with Path(path).open("w", encoding="utf-8") as handle:
        for image_path, transcription in rows:
            handle.write(f"{image_path}\t{normalize_text(transcription)}\n")


def split_entries(
    entries: Sequence[ManifestEntry], val_fraction: float = 0.1, seed: int = 0
) -> Tuple[List[ManifestEntry], List[ManifestEntry]]:
    """
    Seeded train/validation split. When the held-out share rounds to zero
    lines the training entries double as validation entries.
    """
    entries = list(entries)
    n_val = int(round(len(entries) * val_fraction))
    if n_val == 0 or n_val >= len(entries):
        return entries, list(entries)
    order = np.random.default_rng(seed).permutation(len(entries))
    held_out = set(order[:n_val].tolist())
    train = [e for i, e in enumerate(entries) if i not in held_out]
    val = [e for i, e in enumerate(entries) if i in held_out]
    return train, val


def check_target_lengths(entries: Sequence[ManifestEntry], max_target_len: int) -> None:
    """
    Teacher forcing feeds sos plus every character to the decoder, so a
    transcription of n characters needs n + 1 positions.
    """
    for entry in entries:
        positions = len(normalize_text(entry.transcription)) + 1
        if positions > max_target_len:
            raise TranscriptionLengthError(entry.image_path, entry.line_number, positions, max_target_len)
