"""
Line-image standardization: decode, grayscale, fixed height, optional Otsu binarization
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from htr.core.tensor import Tensor
from htr.errors import ContractError, DegenerateHistogramError, DimensionError, ImageFormatError

logger = logging.getLogger(__name__)

CANONICAL_HEIGHT = 64
MAX_WIDTH = 1024
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class LineImage:
    """Grayscale line image with values in [0, 1], ink dark on light"""

    pixels: Tensor
    source_path: str
    original_size: Tuple[int, int]

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]

    def array(self) -> np.ndarray:
        """[H, W] view of the pixel values"""
        return self.pixels.data[0]


def load_image(path: Union[str, Path]) -> np.ndarray:
    """Decode a raster file into an (H, W, C) uint8 grid with C in {1, 3, 4}"""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"image not found: {path}")
    try:
        with Image.open(path) as image:
            image.load()
            if image.mode in ("1", "L", "I", "I;16", "F"):
                image = image.convert("L")
            elif image.mode in ("RGBA", "LA", "PA") or "transparency" in image.info:
                image = image.convert("RGBA")
            elif image.mode != "RGB":
                image = image.convert("RGB")
            grid = np.asarray(image, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise ImageFormatError(f"cannot decode {path}: {exc}") from exc
    if grid.ndim == 2:
        grid = grid[:, :, None]
    return grid


def _luma(raw: Union[np.ndarray, LineImage]) -> Tuple[np.ndarray, float]:
    """Grayscale plane and the value that maps to 1.0"""
    if isinstance(raw, LineImage):
        return raw.array().astype(np.float64), 1.0
    grid = np.asarray(raw, dtype=np.float64)
    if grid.ndim == 2:
        grid = grid[:, :, None]
    if grid.ndim != 3 or grid.shape[0] == 0 or grid.shape[1] == 0:
        raise DimensionError(f"cannot normalize an image of shape {grid.shape}")
    channels = grid.shape[2]
    if channels == 4:
        alpha = grid[:, :, 3:4] / 255.0
        grid = grid[:, :, :3] * alpha + 255.0 * (1.0 - alpha)
        channels = 3
    if channels == 3:
        return grid @ LUMA_WEIGHTS, 255.0
    if channels == 1:
        return grid[:, :, 0], 255.0
    raise ContractError(f"unsupported channel count {channels}")


def canonical_width(height: int, width: int, target_height: int, max_width: int) -> int:
    scaled = int(np.floor(width * target_height / height + 0.5))
    return max(1, min(max_width, scaled))


def normalize_image(
    raw: Union[np.ndarray, LineImage],
    target_height: int = CANONICAL_HEIGHT,
    max_width: int = MAX_WIDTH,
    source_path: str = "",
) -> LineImage:
    """
    Convert to luma grayscale, rescale proportionally to `target_height`
    (bilinear), clamp the width to `max_width` and map to [0, 1].
    """
    if target_height < 16:
        raise ContractError(f"target_height must be at least 16, got {target_height}")
    plane, full_scale = _luma(raw)
    height, width = plane.shape
    if height == 0 or width == 0:
        raise DimensionError(f"cannot normalize a zero-area image ({height}x{width})")
    if isinstance(raw, LineImage):
        source_path = source_path or raw.source_path
        original_size = raw.original_size
    else:
        original_size = (height, width)

    out_width = canonical_width(height, width, target_height, max_width)
    if out_width == max_width and width * target_height / height > max_width + 0.5:
        logger.warning("clamping %s from width %d to %d", source_path or "<image>", width, max_width)
    if (height, width) != (target_height, out_width):
        resized = Image.fromarray(plane.astype(np.float32)).resize(
            (out_width, target_height), Image.Resampling.BILINEAR
        )
        plane = np.asarray(resized, dtype=np.float64)

    values = np.clip(plane / full_scale, 0.0, 1.0)
    return LineImage(
        pixels=Tensor(values[None, :, :]),
        source_path=source_path,
        original_size=original_size,
    )


def otsu_threshold(histogram: np.ndarray) -> int:
    """Lowest threshold maximizing between-class variance of a 256-bin histogram"""
    histogram = np.asarray(histogram, dtype=np.float64)
    if np.count_nonzero(histogram) < 2:
        raise DegenerateHistogramError("Otsu thresholding needs at least two gray levels")
    levels = np.arange(histogram.size, dtype=np.float64)
    total = histogram.sum()
    weight_low = np.cumsum(histogram)
    weight_high = total - weight_low
    mass_low = np.cumsum(histogram * levels)
    mass_high = mass_low[-1] - mass_low
    valid = (weight_low > 0) & (weight_high > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        mean_low = mass_low / weight_low
        mean_high = mass_high / weight_high
        between = weight_low * weight_high * (mean_low - mean_high) ** 2
    between = np.where(valid, between, -1.0)
    return int(np.argmax(between))


def gray_levels(img: LineImage) -> np.ndarray:
    return np.clip(np.rint(img.array() * 255.0), 0, 255).astype(np.int64)


def otsu_binarize(img: LineImage) -> LineImage:
    """Pixels above the Otsu threshold become 1, the rest 0"""
    levels = gray_levels(img)
    histogram = np.bincount(levels.ravel(), minlength=256)
    threshold = otsu_threshold(histogram)
    logger.debug("otsu threshold %d for %s", threshold, img.source_path or "<image>")
    binary = (levels > threshold).astype(np.float32)
    return LineImage(
        pixels=Tensor(binary[None, :, :]),
        source_path=img.source_path,
        original_size=img.original_size,
    )


def standardize(pixels: np.ndarray) -> np.ndarray:
    """Model-boundary map (x - 0.5) / 0.5"""
    return (pixels - 0.5) / 0.5


def prepare_line(
    path: Union[str, Path],
    target_height: int = CANONICAL_HEIGHT,
    max_width: int = MAX_WIDTH,
    binarize: bool = False,
) -> LineImage:
    image = normalize_image(load_image(path), target_height, max_width, source_path=str(path))
    return otsu_binarize(image) if binarize else image


def save_png(img: Union[LineImage, np.ndarray], path: Union[str, Path]) -> None:
    plane = img.array() if isinstance(img, LineImage) else np.asarray(img)
    Image.fromarray(np.clip(np.rint(plane * 255.0), 0, 255).astype(np.uint8)).save(Path(path), format="PNG")
