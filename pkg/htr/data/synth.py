"""
Synthetic line images from per-character glyph bitmaps.

Glyphs are composited right to left on a light background with seeded
jitter in spacing and vertical offset. Transcriptions stay in logical order.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from htr.core.tensor import Tensor
from htr.data.manifest import write_manifest
from htr.errors import ContractError, SynthesisError
from htr.preprocessing.image_prep import CANONICAL_HEIGHT, LineImage, save_png
from htr.text.codec import normalize_text

logger = logging.getLogger(__name__)

MARGIN = 8
MIN_WIDTH = 32
VERTICAL_JITTER = 3
SPACE_WIDTH = 10


@dataclass(frozen=True)
class GlyphSet:
    """
    Ink bitmaps (1 = ink) keyed by character, a baseline offset per glyph
    and the inclusive range of gaps between neighbours.
    """

    glyphs: Dict[str, np.ndarray]
    baselines: Dict[str, int] = field(default_factory=dict)
    spacing: Tuple[int, int] = (1, 4)

    def __post_init__(self):
        low, high = self.spacing
        if low < 0 or high < low:
            raise ContractError(f"invalid spacing range {self.spacing}")

    @property
    def alphabet(self) -> str:
        return "".join(sorted(self.glyphs))

    def glyph(self, char: str) -> np.ndarray:
        if char not in self.glyphs:
            if char == " ":
                return np.zeros((1, SPACE_WIDTH), dtype=np.float32)
            raise SynthesisError(f"no glyph for character {char!r} (U+{ord(char):04X})")
        return self.glyphs[char]

    def require(self, text: str) -> None:
        for char in text:
            self.glyph(char)

    @classmethod
    def procedural(cls, alphabet: Iterable[str], seed: int = 0, height: int = 32) -> "GlyphSet":
        """Deterministic blocky blobs, one per character"""
        glyphs: Dict[str, np.ndarray] = {}
        baselines: Dict[str, int] = {}
        for char in sorted(set(alphabet)):
            if char.isspace():
                continue
            rng = np.random.default_rng([seed, ord(char)])
            columns = int(rng.integers(3, 6))
            coarse = (rng.random((height // 4, columns)) < 0.45).astype(np.float32)
            coarse[rng.integers(0, coarse.shape[0]), :] = 1.0
            glyphs[char] = np.kron(coarse, np.ones((4, 4), dtype=np.float32))
            baselines[char] = int(rng.integers(-4, 5))
        return cls(glyphs=glyphs, baselines=baselines)

    @classmethod
    def from_directory(cls, directory: Union[str, Path]) -> "GlyphSet":
        """
        One PNG per character named U+XXXX.png (dark ink on light paper)
        plus an optional glyphs.json holding "baselines" and "spacing".
        """
        directory = Path(directory)
        if not directory.is_dir():
            raise FileNotFoundError(f"glyph directory not found: {directory}")
        glyphs: Dict[str, np.ndarray] = {}
        for png in sorted(directory.glob("U+*.png")):
            try:
                char = chr(int(png.stem[2:], 16))
            except ValueError as exc:
                raise SynthesisError(f"cannot read a code point from {png.name}") from exc
            with Image.open(png) as image:
                gray = np.asarray(image.convert("L"), dtype=np.float32)
            glyphs[char] = 1.0 - gray / 255.0
        if not glyphs:
            raise SynthesisError(f"no U+XXXX.png glyphs in {directory}")
        baselines: Dict[str, int] = {}
        spacing = (1, 4)
        meta = directory / "glyphs.json"
        if meta.is_file():
            info = json.loads(meta.read_text(encoding="utf-8"))
            for key, offset in info.get("baselines", {}).items():
                char = chr(int(key[2:], 16)) if key.startswith("U+") else key
                baselines[char] = int(offset)
            if "spacing" in info:
                spacing = tuple(int(v) for v in info["spacing"])
        return cls(glyphs=glyphs, baselines=baselines, spacing=spacing)

    @classmethod
    def from_font(cls, font_path: Union[str, Path], alphabet: Iterable[str], size: int = 40) -> "GlyphSet":
        """Render isolated forms with a TrueType/OpenType font"""
        font_path = Path(font_path)
        if not font_path.is_file():
            raise FileNotFoundError(f"font not found: {font_path}")
        font = ImageFont.truetype(str(font_path), size)
        glyphs: Dict[str, np.ndarray] = {}
        for char in sorted(set(alphabet)):
            if char.isspace():
                continue
            left, top, right, bottom = font.getbbox(char)
            if right <= left or bottom <= top:
                raise SynthesisError(f"font {font_path.name} renders nothing for {char!r}")
            canvas = Image.new("L", (right - left, bottom - top), color=255)
            ImageDraw.Draw(canvas).text((-left, -top), char, fill=0, font=font)
            glyphs[char] = 1.0 - np.asarray(canvas, dtype=np.float32) / 255.0
        return cls(glyphs=glyphs)


def _fit_height(ink: np.ndarray, limit: int) -> np.ndarray:
    if ink.shape[0] <= limit:
        return ink
    width = max(1, int(round(ink.shape[1] * limit / ink.shape[0])))
    resized = Image.fromarray(ink.astype(np.float32)).resize((width, limit), Image.Resampling.BILINEAR)
    return np.clip(np.asarray(resized, dtype=np.float32), 0.0, 1.0)


def synth_line(
    text: str,
    glyphs: GlyphSet,
    seed: int,
    noise_level: float = 0.0,
    height: int = CANONICAL_HEIGHT,
) -> Tuple[LineImage, str]:
    """Render `text`; the first character sits at the right edge"""
    glyphs.require(text)
    rng = np.random.default_rng(seed)
    limit = height - 2 * VERTICAL_JITTER - 2
    inks = [_fit_height(glyphs.glyph(char), limit) for char in text]
    low, high = glyphs.spacing
    gaps = [int(rng.integers(low, high + 1)) for _ in range(max(0, len(inks) - 1))]
    offsets = [int(rng.integers(-VERTICAL_JITTER, VERTICAL_JITTER + 1)) for _ in inks]

    width = max(MIN_WIDTH, 2 * MARGIN + sum(ink.shape[1] for ink in inks) + sum(gaps))
    canvas = np.ones((height, width), dtype=np.float32)
    right = width - MARGIN
    for index, (char, ink) in enumerate(zip(text, inks)):
        glyph_h, glyph_w = ink.shape
        top = (height - glyph_h) // 2 + glyphs.baselines.get(char, 0) + offsets[index]
        top = int(np.clip(top, 0, height - glyph_h))
        left = right - glyph_w
        region = canvas[top : top + glyph_h, left:right]
        np.minimum(region, 1.0 - ink, out=region)
        right = left - (gaps[index] if index < len(gaps) else 0)

    if noise_level > 0:
        canvas = np.clip(canvas + rng.normal(0.0, noise_level, canvas.shape), 0.0, 1.0).astype(np.float32)
    image = LineImage(pixels=Tensor(canvas[None]), source_path="", original_size=(height, width))
    return image, text


def write_synthetic_corpus(
    lexicon: Sequence[str],
    glyphs: GlyphSet,
    count: int,
    out_dir: Union[str, Path],
    seed: int = 0,
    noise_level: float = 0.0,
    height: int = CANONICAL_HEIGHT,
) -> Path:
    """Render `count` lines drawn from `lexicon`; returns the manifest path"""
    texts = [t for t in (normalize_text(line) for line in lexicon) if t]
    if not texts:
        raise ContractError("lexicon has no non-empty lines")
    if count < 1:
        raise ContractError(f"count must be positive, got {count}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows: List[Tuple[str, str]] = []
    for index in range(count):
        text = texts[int(rng.integers(len(texts)))]
        image, text = synth_line(text, glyphs, seed=int(rng.integers(2**31)), noise_level=noise_level, height=height)
        name = f"line_{index:05d}.png"
        save_png(image, out_dir / name)
        rows.append((name, text))
        if (index + 1) % 100 == 0:
            logger.info("rendered %d/%d lines", index + 1, count)
    manifest = out_dir / "manifest.tsv"
    write_manifest(rows, manifest)
    logger.info("wrote %d synthetic lines to %s", count, out_dir)
    return manifest
