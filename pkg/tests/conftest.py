"""
Test fixtures and configuration for pytest
"""
import os

import numpy as np
import pytest

from htr.data.synth import GlyphSet, write_synthetic_corpus
from htr.models.pydantic_models import ModelConfig, ResNetConfig, TrainConfig, TransformerConfig
from htr.text.codec import build_vocab

LEXICON = ["بات", "اب", "تاب", "با", "ات", "بتا"]


def pytest_collection_modifyitems(config, items):
    """Skip slow tests unless HTR_RUN_SLOW=1"""
    if os.getenv("HTR_RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="set HTR_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    """Seeded generator shared by one test"""
    return np.random.default_rng(0)


@pytest.fixture
def lexicon():
    return list(LEXICON)


@pytest.fixture
def vocab(lexicon):
    """Vocabulary over the test lexicon"""
    return build_vocab(lexicon)


@pytest.fixture
def tiny_config():
    """Smallest architecture the pipeline accepts: 32-pixel lines, 4-channel ResNet"""
    return ModelConfig(
        image_height=32,
        max_width=256,
        proj_depth=1,
        seed=3,
        resnet=ResNetConfig(width_scale=0.0625),
        transformer=TransformerConfig(
            d_model=16, n_heads=2, enc_layers=1, dec_layers=1, d_ff=32, dropout=0.0, max_target_len=16
        ),
    )


@pytest.fixture
def train_config():
    return TrainConfig(
        learning_rate=1e-3,
        max_steps=4,
        batch_size=2,
        eval_every=2,
        val_fraction=0.25,
        prefetch=1,
        seed=5,
    )


@pytest.fixture
def glyphs(lexicon):
    """Procedural glyph set covering the lexicon"""
    return GlyphSet.procedural("".join(lexicon), seed=1, height=20)


@pytest.fixture
def corpus(tmp_path, lexicon, glyphs):
    """Eight rendered 32-pixel lines and their manifest"""
    return write_synthetic_corpus(lexicon, glyphs, count=8, out_dir=tmp_path / "corpus", seed=2, height=32)
