"""
Width-bucketed batching of preprocessed line images
"""
import logging
import queue
import threading
from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, TypeVar

import numpy as np

from htr.core.tensor import Tensor
from htr.errors import ContractError
from htr.models.pydantic_models import ManifestEntry, ModelConfig
from htr.preprocessing.image_prep import CANONICAL_HEIGHT, LineImage, prepare_line
from htr.text.codec import PAD_ID, Vocab, encode

logger = logging.getLogger(__name__)

BUCKET_WIDTH = 64
WIDTH_MULTIPLE = 32
BACKGROUND = 1.0

T = TypeVar("T")


@dataclass(frozen=True)
class LabeledLine:
    image: LineImage
    text: str


@dataclass
class Batch:
    """
    `images` is [N, 1, H, W] padded with background on the right; `image_mask`
    marks padded pixel columns; `targets` rows are sos ... eos followed by pad.
    """

    images: Tensor
    widths: np.ndarray
    image_mask: np.ndarray
    targets: np.ndarray
    lengths: np.ndarray
    texts: Tuple[str, ...]
    sources: Tuple[str, ...]

    @property
    def size(self) -> int:
        return self.images.shape[0]

    @property
    def width(self) -> int:
        return self.images.shape[3]


def load_lines(entries: Sequence[ManifestEntry], config: ModelConfig) -> List[LabeledLine]:
    return [
        LabeledLine(
            image=prepare_line(entry.image_path, config.image_height, config.max_width, config.binarize),
            text=entry.transcription,
        )
        for entry in entries
    ]


def round_up(width: int, multiple: int = WIDTH_MULTIPLE) -> int:
    return -(-width // multiple) * multiple


def collate(lines: Sequence[LabeledLine], vocab: Vocab, width: int, height: int = CANONICAL_HEIGHT) -> Batch:
    images = np.full((len(lines), 1, height, width), BACKGROUND, dtype=np.float32)
    widths = np.zeros(len(lines), dtype=np.int64)
    encoded = [encode(vocab, line.text).ids for line in lines]
    max_len = max(len(ids) for ids in encoded)
    targets = np.full((len(lines), max_len), PAD_ID, dtype=np.int64)
    for row, (line, ids) in enumerate(zip(lines, encoded)):
        if line.image.height != height:
            raise ContractError(
                f"{line.image.source_path or 'image'} has height {line.image.height}, expected {height}"
            )
        if line.image.width > width:
            raise ContractError(f"line width {line.image.width} exceeds batch width {width}")
        images[row, 0, :, : line.image.width] = line.image.array()
        widths[row] = line.image.width
        targets[row, : len(ids)] = ids
    image_mask = np.arange(width)[None, :] >= widths[:, None]
    return Batch(
        images=Tensor(images),
        widths=widths,
        image_mask=image_mask,
        targets=targets,
        lengths=np.array([len(ids) for ids in encoded], dtype=np.int64),
        texts=tuple(line.text for line in lines),
        sources=tuple(line.image.source_path for line in lines),
    )


def batch_plan(
    lines: Sequence[LabeledLine],
    batch_size: int,
    seed: int,
    height: int = CANONICAL_HEIGHT,
) -> List[Tuple[List[int], int]]:
    """
    Line indices and padded width of every batch of one epoch. Lines fall
    into buckets every 64 px of width, are shuffled inside their bucket and
    padded to the bucket's widest line rounded up to a multiple of 32. Batch
    order is shuffled too.
    """
    if batch_size < 1:
        raise ContractError(f"batch_size must be at least 1, got {batch_size}")
    rng = np.random.default_rng(seed)
    buckets: Dict[int, List[int]] = {}
    for index, line in enumerate(lines):
        if line.image.height != height:
            raise ContractError(
                f"{line.image.source_path or 'image'} has height {line.image.height}, expected {height}"
            )
        buckets.setdefault(line.image.width // BUCKET_WIDTH, []).append(index)

    plan: List[Tuple[List[int], int]] = []
    for bucket in sorted(buckets):
        members = buckets[bucket]
        width = round_up(max(lines[i].image.width for i in members))
        order = [members[i] for i in rng.permutation(len(members))]
        for start in range(0, len(order), batch_size):
            plan.append((order[start : start + batch_size], width))
        logger.debug("bucket %d: %d lines padded to %d px", bucket, len(members), width)
    return [plan[position] for position in rng.permutation(len(plan))]


def make_batches(
    lines: Sequence[LabeledLine],
    vocab: Vocab,
    batch_size: int,
    seed: int,
    height: int = CANONICAL_HEIGHT,
) -> Iterator[Batch]:
    """One epoch of batches following `batch_plan`"""
    plan = batch_plan(lines, batch_size, seed, height)
    return (collate([lines[i] for i in indices], vocab, width, height) for indices, width in plan)


_DONE = object()


def prefetch(source: Iterable[T], depth: int = 2) -> Iterator[T]:
    """
    Produce items on a background thread into a bounded queue. Exceptions
    raised by the producer are re-raised in the consumer.
    """
    if depth <= 0:
        yield from source
        return
    slots: "queue.Queue" = queue.Queue(maxsize=depth)
    stop = threading.Event()

    def offer(item: object) -> bool:
        while not stop.is_set():
            try:
                slots.put(item, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def produce() -> None:
        try:
            for item in source:
                if not offer(item):
                    return
            offer(_DONE)
        except BaseException as exc:  # noqa: BLE001 - handed to the consumer
            offer(exc)

    worker = threading.Thread(target=produce, name="htr-prefetch", daemon=True)
    worker.start()
    try:
        while True:
            item = slots.get()
            if item is _DONE:
                return
            if isinstance(item, BaseException):
                raise item
            yield item
    finally:
        stop.set()
        worker.join(timeout=1.0)
