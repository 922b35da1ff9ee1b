"""
Tests for line-image preprocessing
"""
import logging
from fractions import Fraction

import numpy as np
import pytest
from PIL import Image

from htr.core.tensor import Tensor
from htr.errors import ContractError, DegenerateHistogramError, DimensionError, ImageFormatError
from htr.preprocessing.image_prep import (
    LineImage,
    load_image,
    normalize_image,
    otsu_binarize,
    otsu_threshold,
    prepare_line,
    save_png,
    standardize,
)


def test_normalize_rescales_to_canonical_height(rng):
    """Test proportional resize to height 64"""
    raw = rng.integers(0, 256, size=(32, 100, 1), dtype=np.uint8)
    image = normalize_image(raw, 64, 1024, source_path="line.png")
    assert isinstance(image, LineImage)
    assert (image.height, image.width) == (64, 200)
    assert image.original_size == (32, 100)
    assert image.source_path == "line.png"
    assert 0.0 <= image.array().min() and image.array().max() <= 1.0


def test_normalize_keeps_canonical_input_unchanged():
    """Test that an image already at the canonical height is only rescaled to [0, 1]"""
    raw = np.full((64, 40, 1), 51, dtype=np.uint8)
    image = normalize_image(raw)
    np.testing.assert_allclose(image.array(), 0.2, rtol=1e-6)


def test_normalize_rgb_uses_luma():
    """Test BT.601 luma weights"""
    raw = np.zeros((64, 8, 3), dtype=np.uint8)
    raw[:, :, 1] = 255
    np.testing.assert_allclose(normalize_image(raw).array(), 0.587, rtol=1e-5)


def test_normalize_transparent_pixels_become_paper():
    """Test alpha compositing over white"""
    raw = np.zeros((64, 8, 4), dtype=np.uint8)
    np.testing.assert_allclose(normalize_image(raw).array(), 1.0)


def test_normalize_clamps_width(caplog):
    """Test the width clamp and its warning"""
    raw = np.full((16, 1000, 1), 200, dtype=np.uint8)
    with caplog.at_level(logging.WARNING):
        image = normalize_image(raw, 64, 1024)
    assert image.width == 1024
    assert "clamping" in caplog.text


def test_normalize_rejects_bad_input():
    """Test the height floor and zero-area images"""
    with pytest.raises(ContractError):
        normalize_image(np.ones((20, 20, 1), dtype=np.uint8), target_height=8)
    with pytest.raises(DimensionError):
        normalize_image(np.ones((0, 20, 1), dtype=np.uint8))


def test_otsu_threshold_bimodal():
    """Test that the lowest maximizing threshold is chosen"""
    histogram = np.zeros(256)
    histogram[50] = 100
    histogram[200] = 100
    assert otsu_threshold(histogram) == 50


def test_otsu_threshold_degenerate():
    """Test that a single gray level has no threshold"""
    histogram = np.zeros(256)
    histogram[128] = 10
    with pytest.raises(DegenerateHistogramError):
        otsu_threshold(histogram)


def test_otsu_binarize_separates_ink_and_paper():
    """Test binarization of a two-level image"""
    plane = np.full((64, 32), 0.9)
    plane[20:40, 5:25] = 0.1
    image = normalize_image((plane * 255).astype(np.uint8)[:, :, None])
    binary = otsu_binarize(image).array()
    assert set(np.unique(binary)) == {0.0, 1.0}
    assert binary[30, 10] == 0.0 and binary[0, 0] == 1.0


def test_standardize():
    """Test the [0, 1] to [-1, 1] map"""
    np.testing.assert_allclose(standardize(np.array([0.0, 0.5, 1.0])), [-1.0, 0.0, 1.0])


def test_save_and_prepare_line(tmp_path, rng):
    """Test that a saved line survives a reload within one gray level"""
    plane = rng.uniform(0, 1, size=(64, 48))
    path = tmp_path / "line.png"
    save_png(plane, path)
    image = prepare_line(path)
    assert (image.height, image.width) == (64, 48)
    np.testing.assert_allclose(image.array(), plane, atol=1 / 255 + 1e-6)


def test_prepare_line_binarized(tmp_path):
    """Test the optional binarization flag"""
    plane = np.full((32, 32), 0.8)
    plane[8:24, 8:24] = 0.2
    path = tmp_path / "line.png"
    save_png(plane, path)
    assert set(np.unique(prepare_line(path, binarize=True).array())) == {0.0, 1.0}


def test_load_image_errors(tmp_path):
    """Test missing and undecodable files"""
    with pytest.raises(FileNotFoundError):
        load_image(tmp_path / "missing.png")
    bogus = tmp_path / "bogus.png"
    bogus.write_bytes(b"not an image")
    with pytest.raises(ImageFormatError):
        load_image(bogus)


def test_load_image_gray_and_palette(tmp_path):
    """Test that gray files load with one channel and palette files as RGB"""
    Image.new("L", (10, 4), color=90).save(tmp_path / "gray.png")
    Image.new("P", (10, 4)).save(tmp_path / "palette.png")
    assert load_image(tmp_path / "gray.png").shape == (4, 10, 1)
    assert load_image(tmp_path / "palette.png").shape[2] in (3, 4)


def brute_force_otsu_partition(levels):
    """Ink mask of the lowest threshold with the largest between-class variance, in exact arithmetic"""
    pixels = levels.ravel().tolist()
    total = len(pixels)
    best, best_threshold = None, None
    for threshold in range(256):
        low = [p for p in pixels if p <= threshold]
        high = [p for p in pixels if p > threshold]
        if not low or not high:
            continue
        mean_gap = Fraction(sum(low), len(low)) - Fraction(sum(high), len(high))
        between = Fraction(len(low) * len(high), total * total) * mean_gap * mean_gap
        if best is None or between > best:
            best, best_threshold = between, threshold
    return levels > best_threshold


def test_otsu_binarize_matches_brute_force():
    """Test the partition on 50 random 16x16 images"""
    rng = np.random.default_rng(123)
    for _ in range(50):
        levels = rng.integers(0, 256, size=(16, 16))
        image = LineImage(pixels=Tensor(levels[None] / 255.0), source_path="", original_size=(16, 16))

        binary = otsu_binarize(image).array()

        np.testing.assert_array_equal(binary == 1.0, brute_force_otsu_partition(levels))
