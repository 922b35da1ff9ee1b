"""
Checkpoint archive.

Layout: 8-byte magic b"HTRCKPT1", 4-byte little-endian header length, UTF-8
JSON header, then little-endian float32 tensor payloads in directory order.
"""
import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from htr.errors import CheckpointFormatError, CheckpointMigrationError, ContractError
from htr.models.pydantic_models import ModelConfig, TrainConfig
from htr.text.codec import Vocab

MAGIC = b"HTRCKPT1"
FORMAT_VERSION = 1
PAYLOAD_DTYPE = np.dtype("<f4")
OPTIM_PREFIX = "optim."


class TensorRecord(BaseModel):
    name: str
    shape: List[int]
    offset: int = Field(..., ge=0, description="Byte offset from the start of the payload section")
    length: int = Field(..., ge=0, description="Payload size in bytes")


class CheckpointHeader(BaseModel):
    """JSON header; everything but the raw tensor bytes"""
    format_version: int = FORMAT_VERSION
    architecture: ModelConfig
    training: TrainConfig
    vocab: List[str]
    step: int = Field(0, ge=0)
    learning_rate: float = Field(..., ge=0.0, description="Current rate after any divergence halving")
    adam_t: int = Field(0, ge=0, description="Adam update counter used for bias correction")
    rng_state: Dict[str, Any] = Field(default_factory=dict, description="Dropout generator state")
    tensors: List[TensorRecord] = Field(default_factory=list)


@dataclass
class Checkpoint:
    """Configs, vocabulary, training position and named tensors"""

    architecture: ModelConfig
    training: TrainConfig
    vocab: Vocab
    tensors: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    step: int = 0
    learning_rate: float = 0.0
    adam_t: int = 0
    rng_state: Dict[str, Any] = field(default_factory=dict)

    def model_state(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v) for k, v in self.tensors.items() if not k.startswith(OPTIM_PREFIX))

    def optimizer_state(self) -> Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray]]:
        first, second = {}, {}
        for name, array in self.tensors.items():
            if name.startswith("optim.m."):
                first[name[len("optim.m."):]] = array
            elif name.startswith("optim.v."):
                second[name[len("optim.v."):]] = array
        return first, second

    def to_dict(self) -> Dict[str, Any]:
        """Summary without tensor payloads"""
        return {
            "format_version": FORMAT_VERSION,
            "step": self.step,
            "learning_rate": self.learning_rate,
            "vocab_size": len(self.vocab),
            "tensors": len(self.tensors),
            "parameters": int(sum(v.size for v in self.model_state().values())),
        }


def build_tensor_map(
    model_state: Mapping[str, np.ndarray],
    first_moments: Mapping[str, np.ndarray],
    second_moments: Mapping[str, np.ndarray],
) -> "OrderedDict[str, np.ndarray]":
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for name, array in model_state.items():
        tensors[name] = array
    for name, array in first_moments.items():
        tensors[f"optim.m.{name}"] = array
    for name, array in second_moments.items():
        tensors[f"optim.v.{name}"] = array
    return tensors


def to_bytes(ckpt: Checkpoint) -> bytes:
    records: List[TensorRecord] = []
    payloads: List[bytes] = []
    offset = 0
    for name, array in ckpt.tensors.items():
        raw = np.ascontiguousarray(array, dtype=PAYLOAD_DTYPE).tobytes()
        records.append(TensorRecord(name=name, shape=list(np.shape(array)), offset=offset, length=len(raw)))
        payloads.append(raw)
        offset += len(raw)
    header = CheckpointHeader(
        architecture=ckpt.architecture,
        training=ckpt.training,
        vocab=list(ckpt.vocab.id_to_char),
        step=ckpt.step,
        learning_rate=ckpt.learning_rate,
        adam_t=ckpt.adam_t,
        rng_state=ckpt.rng_state,
        tensors=records,
    )
    encoded = header.model_dump_json().encode("utf-8")
    return MAGIC + struct.pack("<I", len(encoded)) + encoded + b"".join(payloads)


def from_bytes(blob: bytes, source: str = "<bytes>") -> Checkpoint:
    if len(blob) < len(MAGIC) + 4 or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointFormatError(f"{source} is not a checkpoint archive (bad magic)")
    (header_length,) = struct.unpack("<I", blob[len(MAGIC) : len(MAGIC) + 4])
    start = len(MAGIC) + 4
    if start + header_length > len(blob):
        raise CheckpointFormatError(f"{source}: header of {header_length} bytes is truncated")
    try:
        fields = json.loads(blob[start : start + header_length].decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise CheckpointFormatError(f"{source}: corrupted header: {exc}") from exc
    if not isinstance(fields, dict):
        raise CheckpointFormatError(f"{source}: header is not a JSON object")
    version = fields.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointMigrationError(
            f"{source}: format version {version} is not supported (expected {FORMAT_VERSION})"
        )
    try:
        header = CheckpointHeader.model_validate(fields)
    except ValidationError as exc:
        raise CheckpointFormatError(f"{source}: invalid header: {exc}") from exc

    payload = memoryview(blob)[start + header_length :]
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for record in header.tensors:
        if record.name in tensors:
            raise CheckpointFormatError(f"{source}: tensor {record.name} listed twice")
        count = int(np.prod(record.shape)) if record.shape else 1
        if record.length != count * PAYLOAD_DTYPE.itemsize:
            raise CheckpointFormatError(f"{source}: tensor {record.name} length does not match its shape")
        if record.offset + record.length > len(payload):
            raise CheckpointFormatError(f"{source}: payload of {record.name} is truncated")
        array = np.frombuffer(payload[record.offset : record.offset + record.length], dtype=PAYLOAD_DTYPE)
        tensors[record.name] = array.astype(np.float32).reshape(record.shape)

    try:
        vocab = Vocab(tuple(header.vocab))
    except ContractError as exc:
        raise CheckpointFormatError(f"{source}: invalid vocabulary: {exc}") from exc
    return Checkpoint(
        architecture=header.architecture,
        training=header.training,
        vocab=vocab,
        tensors=tensors,
        step=header.step,
        learning_rate=header.learning_rate,
        adam_t=header.adam_t,
        rng_state=header.rng_state,
    )


def save_checkpoint(path: Union[str, Path], ckpt: Checkpoint) -> None:
    """Write atomically through a sibling temporary file"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    staging = path.with_name(path.name + ".tmp")
    staging.write_bytes(to_bytes(ckpt))
    staging.replace(path)


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return from_bytes(path.read_bytes(), source=str(path))
