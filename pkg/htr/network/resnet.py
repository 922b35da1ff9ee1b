"""
ResNet-18-shaped feature extractor and the projection head that turns its
feature map into a left-to-right sequence of d_model vectors.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from htr.core import ops
from htr.core.module import Buffer, Linear, Module, Parameter
from htr.core.tensor import Tensor
from htr.errors import ContractError, DimensionError
from htr.models.pydantic_models import ResNetConfig

logger = logging.getLogger(__name__)


class Conv2d(Module):
    """Bias-free convolution with Kaiming-uniform init"""

    def __init__(self, in_channels: int, out_channels: int, kernel: int, stride: int, padding: int,
                 rng: np.random.Generator):
        super().__init__()
        bound = np.sqrt(6.0 / (in_channels * kernel * kernel))
        self.weight = Parameter(rng.uniform(-bound, bound, size=(out_channels, in_channels, kernel, kernel)))
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, stride=self.stride, padding=self.padding)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.running_mean = Buffer(np.zeros(channels))
        self.running_var = Buffer(np.ones(channels))
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ops.batchnorm2d(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            training=self.training, momentum=self.momentum, eps=self.eps,
        )


class Shortcut(Module):
    """1x1 strided projection used when a block changes stride or width"""

    def __init__(self, in_channels: int, out_channels: int, stride: int, rng: np.random.Generator):
        super().__init__()
        self.conv = Conv2d(in_channels, out_channels, 1, stride, 0, rng)
        self.bn = BatchNorm2d(out_channels)

    def forward(self, x: Tensor) -> Tensor:
        return self.bn(self.conv(x))


class BasicBlock(Module):
    def __init__(self, in_channels: int, out_channels: int, stride: int, rng: np.random.Generator):
        super().__init__()
        self.conv1 = Conv2d(in_channels, out_channels, 3, stride, 1, rng)
        self.bn1 = BatchNorm2d(out_channels)
        self.conv2 = Conv2d(out_channels, out_channels, 3, 1, 1, rng)
        self.bn2 = BatchNorm2d(out_channels)
        self.shortcut: Optional[Shortcut] = None
        if stride != 1 or in_channels != out_channels:
            self.shortcut = Shortcut(in_channels, out_channels, stride, rng)

    def forward(self, x: Tensor) -> Tensor:
        out = ops.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        skip = x if self.shortcut is None else self.shortcut(x)
        return ops.relu(ops.add(out, skip))


class ResNet(Module):
    """
    Stem (7x7/2 conv, batchnorm, relu, 3x3/2 maxpool) followed by stages of
    basic blocks; every stage after the first halves the resolution.
    """

    def __init__(self, cfg: ResNetConfig, rng: np.random.Generator, in_channels: int = 1):
        super().__init__()
        self.cfg = cfg
        stem = cfg.scaled_stem
        self.stem = Conv2d(in_channels, stem, 7, 2, 3, rng)
        self.stem_bn = BatchNorm2d(stem)
        blocks: List[BasicBlock] = []
        channels = stem
        for stage, (width, count) in enumerate(zip(cfg.scaled_stages, cfg.blocks_per_stage)):
            for index in range(count):
                stride = 2 if stage > 0 and index == 0 else 1
                blocks.append(BasicBlock(channels, width, stride, rng))
                channels = width
        self.blocks = blocks
        self.out_channels = channels

    @property
    def reduction(self) -> int:
        """Total downsampling factor of the network"""
        return 4 * 2 ** (len(self.cfg.stage_channels) - 1)

    def forward(self, image: Tensor) -> Tensor:
        if image.ndim != 4:
            raise DimensionError(f"resnet expects [N, C, H, W], got {image.shape}")
        _, _, height, width = image.shape
        if height % self.reduction or width % self.reduction:
            raise ContractError(
                f"image height and width must be multiples of {self.reduction}, got {height}x{width}"
            )
        x = ops.relu(self.stem_bn(self.stem(image)))
        x = ops.maxpool2d(x, kernel=3, stride=2, padding=1)
        for block in self.blocks:
            x = block(x)
        return x


def resnet_forward(model: ResNet, image: Tensor) -> Tensor:
    return model(image)


def expected_parameter_count(cfg: ResNetConfig, in_channels: int = 1) -> int:
    """Closed-form trainable parameter count of `ResNet(cfg)`"""
    stem = cfg.scaled_stem
    total = 49 * in_channels * stem + 2 * stem
    channels = stem
    for stage, (width, count) in enumerate(zip(cfg.scaled_stages, cfg.blocks_per_stage)):
        for index in range(count):
            stride = 2 if stage > 0 and index == 0 else 1
            total += 9 * channels * width + 2 * width + 9 * width * width + 2 * width
            if stride != 1 or channels != width:
                total += channels * width + 2 * width
            channels = width
    return total


@dataclass
class EncoderOutput:
    """
    Memory sequence [N, T, d_model] and its padding mask [N, T] (true = padded).
    """

    memory: Tensor
    pad_mask: np.ndarray

    @property
    def length(self) -> int:
        return self.memory.shape[1]

    def valid_lengths(self) -> np.ndarray:
        return (~self.pad_mask).sum(axis=1)

    def select(self, index: int) -> "EncoderOutput":
        """Single-sample view, detached from any tape"""
        return EncoderOutput(
            memory=Tensor.wrap(self.memory.data[index : index + 1]),
            pad_mask=self.pad_mask[index : index + 1],
        )


class ProjectionHead(Module):
    """1 to 3 affine layers with relu in between"""

    def __init__(self, in_dim: int, d_model: int, depth: int, rng: np.random.Generator):
        super().__init__()
        if not 1 <= depth <= 3:
            raise ContractError(f"projection depth must be 1-3, got {depth}")
        self.in_dim = in_dim
        dims = [in_dim] + [d_model] * depth
        self.layers = [Linear(a, b, rng) for a, b in zip(dims, dims[1:])]

    def forward(self, x: Tensor) -> Tensor:
        for index, layer in enumerate(self.layers):
            if index:
                x = ops.relu(x)
            x = layer(x)
        return x


def column_pad_mask(widths: Optional[Sequence[int]], batch: int, length: int, reduction: int) -> np.ndarray:
    """Mark sequence positions that only see padded image columns"""
    mask = np.zeros((batch, length), dtype=bool)
    if widths is None:
        return mask
    if len(widths) != batch:
        raise DimensionError(f"{len(widths)} widths for a batch of {batch}")
    for row, width in enumerate(widths):
        valid = max(1, -(-int(width) // reduction))
        mask[row, valid:] = True
    return mask


def features_to_sequence(
    fmap: Tensor,
    proj: ProjectionHead,
    widths: Optional[Sequence[int]] = None,
    reduction: int = 32,
) -> EncoderOutput:
    """
    Stack the feature rows of every column into one vector and project it.

    Column t of the feature map becomes sequence position t, so positions
    follow pixel order left to right.
    """
    if fmap.ndim != 4:
        raise DimensionError(f"feature map must be [N, C, H, T], got {fmap.shape}")
    n, channels, rows, length = fmap.shape
    if proj.in_dim != channels * rows:
        raise ContractError(
            f"projection expects {proj.in_dim} inputs, feature columns have {channels * rows}"
        )
    columns = ops.reshape(ops.transpose(fmap, (0, 3, 2, 1)), (n, length, rows * channels))
    memory = proj(columns)
    return EncoderOutput(memory=memory, pad_mask=column_pad_mask(widths, n, length, reduction))


def import_weights(model: Module, weights: Mapping[str, np.ndarray], prefix: str = "encoder.") -> Dict[str, List[str]]:
    """
    Load externally supplied named tensors into `model`.

    Names are matched after stripping `prefix`; entries with unknown names
    or mismatched shapes are skipped and reported.
    """
    own = dict(model.named_parameters())
    own.update(model.named_buffers())
    loaded, skipped = [], []
    for name, array in weights.items():
        key = name[len(prefix):] if prefix and name.startswith(prefix) else name
        target = own.get(key)
        if target is None or tuple(np.shape(array)) != target.shape:
            skipped.append(name)
            continue
        target.data[...] = np.asarray(array, dtype=target.dtype)
        loaded.append(key)
    logger.info("imported %d tensors, skipped %d", len(loaded), len(skipped))
    return {"loaded": loaded, "skipped": skipped}
