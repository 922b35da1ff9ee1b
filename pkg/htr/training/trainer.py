"""
Teacher-forced training, validation and checkpoint orchestration
"""
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from htr.core import ops
from htr.core.tensor import Tape, Tensor, no_grad
from htr.data.batching import BACKGROUND, Batch, LabeledLine, batch_plan, collate, load_lines, prefetch, round_up
from htr.data.manifest import check_target_lengths, split_entries
from htr.errors import ContractError, DivergenceError
from htr.evaluation.metrics import build_report
from htr.models.checkpoint import Checkpoint, build_tensor_map, load_checkpoint, save_checkpoint
from htr.models.pydantic_models import CerReport, ManifestEntry, ModelConfig, TrainConfig, TrainLogRecord
from htr.network.decoding import decode
from htr.network.model import HTRModel
from htr.preprocessing.image_prep import LineImage, prepare_line
from htr.text.codec import PAD_ID, Vocab, build_vocab
from htr.text.codec import decode as decode_tokens
from htr.training.optim import AdamState, adam_step, clip_grad_norm

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.htr"
LOG_NAME = "train_log.jsonl"


@dataclass(frozen=True)
class StepResult:
    loss: float
    grad_norm: float


def teacher_forcing_loss(model: HTRModel, batch: Batch) -> Tensor:
    """Inputs are targets[:, :-1]; position t is scored against targets[:, t + 1]"""
    encoded = model.encode(batch.images, batch.widths)
    logits = model.decode_logits(batch.targets[:, :-1], encoded)
    return ops.cross_entropy_masked(logits, batch.targets[:, 1:], ignore_id=PAD_ID)


def train_step(
    model: HTRModel,
    batch: Batch,
    state: AdamState,
    cfg: TrainConfig,
    learning_rate: float,
    step: int = 0,
) -> StepResult:
    """Forward, backward, clip and one Adam update; raises DivergenceError on a non-finite loss"""
    if not model.training:
        raise ContractError("train_step needs the model in train mode")
    model.zero_grad()
    with Tape() as tape:
        loss = teacher_forcing_loss(model, batch)
    value = loss.item()
    if not np.isfinite(value):
        raise DivergenceError(step, value)
    tape.backward(loss)
    params = list(model.named_parameters())
    norm = clip_grad_norm([p for _, p in params], cfg.grad_clip)
    adam_step(params, state, cfg, learning_rate)
    logger.debug("step %d loss %.5f grad norm %.4f", step, value, norm)
    return StepResult(loss=value, grad_norm=norm)


def export_rng(generator: np.random.Generator) -> Dict[str, Any]:
    """Generator state with the 128-bit counters stored as decimal strings"""
    raw = generator.bit_generator.state
    return {
        "bit_generator": raw["bit_generator"],
        "state": str(raw["state"]["state"]),
        "inc": str(raw["state"]["inc"]),
        "has_uint32": int(raw["has_uint32"]),
        "uinteger": int(raw["uinteger"]),
    }


def import_rng(generator: np.random.Generator, exported: Dict[str, Any]) -> None:
    generator.bit_generator.state = {
        "bit_generator": exported["bit_generator"],
        "state": {"state": int(exported["state"]), "inc": int(exported["inc"])},
        "has_uint32": int(exported["has_uint32"]),
        "uinteger": int(exported["uinteger"]),
    }


def model_from_checkpoint(ckpt: Checkpoint) -> HTRModel:
    model = HTRModel(ckpt.architecture, len(ckpt.vocab))
    model.load_state_dict(ckpt.model_state())
    if ckpt.rng_state:
        import_rng(model.dropout_rng, ckpt.rng_state)
    return model


def pad_line(image: LineImage, multiple: int = 32) -> Tuple[Tensor, int]:
    """[1, 1, H, W'] with W' rounded up to `multiple`, plus the original width"""
    width = image.width
    padded = np.full((1, 1, image.height, round_up(width, multiple)), BACKGROUND, dtype=np.float32)
    padded[0, 0, :, :width] = image.array()
    return Tensor(padded), width


def transcribe(
    model: HTRModel,
    vocab: Vocab,
    image: LineImage,
    beam_width: int = 1,
    max_len: Optional[int] = None,
) -> str:
    """Decode one preprocessed line with frozen weights"""
    pixels, width = pad_line(image, model.encoder.reduction)
    with no_grad():
        encoded = model.encode(pixels, [width])
    return decode_tokens(vocab, decode(model, encoded, vocab, beam_width, max_len))


class Trainer:
    """
    Owns the model, optimizer state and training position. A trainer is a
    single writer; one step runs at a time.
    """

    def __init__(self, model: HTRModel, vocab: Vocab, cfg: TrainConfig):
        self.model = model
        self.vocab = vocab
        self.cfg = cfg
        self.state = AdamState.zeros(model.named_parameters())
        self.step = 0
        self.learning_rate = cfg.learning_rate

    @classmethod
    def create(cls, model_config: ModelConfig, cfg: TrainConfig, vocab: Vocab) -> "Trainer":
        return cls(HTRModel(model_config, len(vocab)), vocab, cfg)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, cfg: Optional[TrainConfig] = None) -> "Trainer":
        trainer = cls(model_from_checkpoint(ckpt), ckpt.vocab, cfg or ckpt.training)
        first, second = ckpt.optimizer_state()
        for name, array in first.items():
            trainer.state.m[name] = array.copy()
        for name, array in second.items():
            trainer.state.v[name] = array.copy()
        trainer.state.t = ckpt.adam_t
        trainer.step = ckpt.step
        trainer.learning_rate = ckpt.learning_rate
        return trainer

    @property
    def config(self) -> ModelConfig:
        return self.model.config

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            architecture=self.model.config,
            training=self.cfg,
            vocab=self.vocab,
            tensors=build_tensor_map(self.model.state_dict(), self.state.m, self.state.v),
            step=self.step,
            learning_rate=self.learning_rate,
            adam_t=self.state.t,
            rng_state=export_rng(self.model.dropout_rng),
        )

    def restore(self, ckpt: Checkpoint) -> None:
        """Roll back to an in-memory snapshot taken with `checkpoint()`"""
        self.model.load_state_dict(ckpt.model_state())
        first, second = ckpt.optimizer_state()
        self.state = AdamState(
            m={k: v.copy() for k, v in first.items()},
            v={k: v.copy() for k, v in second.items()},
            t=ckpt.adam_t,
        )
        self.step = ckpt.step
        self.learning_rate = ckpt.learning_rate
        import_rng(self.model.dropout_rng, ckpt.rng_state)

    def train_step(self, batch: Batch) -> StepResult:
        self.model.train()
        result = train_step(self.model, batch, self.state, self.cfg, self.learning_rate, self.step)
        self.step += 1
        return result

    def batches(self, lines: Sequence[LabeledLine]) -> Iterator[Batch]:
        """Endless epochs (epoch e shuffled with seed + e) starting at the current step"""
        skip = self.step
        height = self.model.config.image_height
        for epoch in itertools.count():
            plan = batch_plan(lines, self.cfg.batch_size, self.cfg.seed + epoch, height)
            if skip >= len(plan):
                skip -= len(plan)
                continue
            for indices, width in plan[skip:]:
                yield collate([lines[i] for i in indices], self.vocab, width, height)
            skip = 0

    def validate(self, lines: Sequence[LabeledLine]) -> Optional[float]:
        """Corpus CER of greedy transcriptions"""
        if not lines:
            return None
        self.model.eval()
        try:
            pairs = [(line.text, transcribe(self.model, self.vocab, line.image)) for line in lines]
        finally:
            self.model.train()
        return build_report(pairs).corpus_cer


@dataclass
class FitResult:
    checkpoint: Checkpoint
    log: List[TrainLogRecord] = field(default_factory=list)


def fit(
    entries: Sequence[ManifestEntry],
    model_config: ModelConfig,
    cfg: TrainConfig,
    out_dir: Union[str, Path],
    resume: Optional[Checkpoint] = None,
) -> FitResult:
    """
    Train to `cfg.max_steps`, validating and checkpointing every
    `eval_every` steps and at the end. A non-finite loss rolls back to the
    last checkpoint with a halved learning rate, up to `max_retries` times.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if resume is not None:
        trainer = Trainer.from_checkpoint(resume, cfg)
        model_config = trainer.config
    else:
        vocab = build_vocab(entry.transcription for entry in entries)
        trainer = Trainer.create(model_config, cfg, vocab)

    check_target_lengths(entries, model_config.transformer.max_target_len)
    train_entries, val_entries = split_entries(entries, cfg.val_fraction, cfg.seed)
    train_lines = load_lines(train_entries, model_config)
    val_lines = train_lines if val_entries == train_entries else load_lines(val_entries, model_config)
    logger.info(
        "training on %d lines, validating on %d, vocab size %d, %d parameters",
        len(train_lines), len(val_lines), len(trainer.vocab), trainer.model.parameter_count(),
    )

    log_path = out_dir / LOG_NAME
    ckpt_path = out_dir / CHECKPOINT_NAME
    log_handle = log_path.open("a" if resume is not None else "w", encoding="utf-8")
    history: List[TrainLogRecord] = []
    pending: List[TrainLogRecord] = []
    snapshot = trainer.checkpoint()
    retries = 0

    def commit() -> Checkpoint:
        ckpt = trainer.checkpoint()
        save_checkpoint(ckpt_path, ckpt)
        for record in pending:
            log_handle.write(record.model_dump_json(exclude_none=True) + "\n")
        log_handle.flush()
        history.extend(pending)
        pending.clear()
        return ckpt

    try:
        stream = prefetch(trainer.batches(train_lines), cfg.prefetch)
        while trainer.step < cfg.max_steps:
            batch = next(stream)
            try:
                result = trainer.train_step(batch)
            except DivergenceError as exc:
                retries += 1
                if retries > cfg.max_retries:
                    raise
                stream.close()
                trainer.restore(snapshot)
                trainer.learning_rate /= 2
                pending.clear()
                logger.warning(
                    "%s; retry %d/%d from step %d with learning rate %g",
                    exc, retries, cfg.max_retries, trainer.step, trainer.learning_rate,
                )
                stream = prefetch(trainer.batches(train_lines), cfg.prefetch)
                continue
            record = TrainLogRecord(step=trainer.step, loss=result.loss)
            pending.append(record)
            if trainer.step % cfg.eval_every == 0 or trainer.step == cfg.max_steps:
                record.val_cer = trainer.validate(val_lines)
                snapshot = commit()
                logger.info("step %d loss %.4f val CER %s", trainer.step, result.loss, record.val_cer)
        stream.close()
        if pending or snapshot.step != trainer.step or not ckpt_path.exists():
            snapshot = commit()
    finally:
        log_handle.close()
    logger.info("wrote %s", ckpt_path)
    return FitResult(checkpoint=snapshot, log=history)


def evaluate_model(
    checkpoint: Union[Checkpoint, str, Path],
    entries: Sequence[ManifestEntry],
    beam_width: int = 1,
    workers: int = 1,
) -> CerReport:
    """Transcribe every entry with frozen weights and score it"""
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
    model = model_from_checkpoint(ckpt).eval()
    config = ckpt.architecture

    def run(entry: ManifestEntry) -> str:
        image = prepare_line(entry.image_path, config.image_height, config.max_width, config.binarize)
        return transcribe(model, ckpt.vocab, image, beam_width)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            hypotheses = list(pool.map(run, entries))
    else:
        hypotheses = [run(entry) for entry in entries]
    return build_report(
        [(entry.transcription, hyp) for entry, hyp in zip(entries, hypotheses)],
        sources=[entry.image_path for entry in entries],
    )
