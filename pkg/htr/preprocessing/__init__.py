from htr.preprocessing.image_prep import (
    CANONICAL_HEIGHT,
    MAX_WIDTH,
    LineImage,
    load_image,
    normalize_image,
    otsu_binarize,
    prepare_line,
    save_png,
    standardize,
)

__all__ = [
    "CANONICAL_HEIGHT",
    "MAX_WIDTH",
    "LineImage",
    "load_image",
    "normalize_image",
    "otsu_binarize",
    "prepare_line",
    "save_png",
    "standardize",
]
