"""
Full recognizer: ResNet features, projection head, transformer encoder and
decoder. Sub-module names fix the checkpoint prefixes encoder./proj./tfenc./tfdec.
"""
from typing import Optional, Sequence

import numpy as np

from htr.core.module import Module
from htr.core.tensor import Tensor
from htr.models.pydantic_models import ModelConfig
from htr.network.resnet import EncoderOutput, ProjectionHead, ResNet, features_to_sequence
from htr.network.transformer import TransformerDecoder, TransformerEncoder
from htr.preprocessing.image_prep import standardize


class HTRModel(Module):
    def __init__(self, config: ModelConfig, vocab_size: int):
        super().__init__()
        self.config = config
        self.vocab_size = vocab_size
        rng = np.random.default_rng(config.seed)
        # Shared by every dropout site; its state travels with checkpoints.
        self.dropout_rng = np.random.default_rng(config.seed + 1)
        tcfg = config.transformer
        self.encoder = ResNet(config.resnet, rng)
        rows = config.image_height // self.encoder.reduction
        self.proj = ProjectionHead(rows * self.encoder.out_channels, tcfg.d_model, config.proj_depth, rng)
        self.tfenc = TransformerEncoder(tcfg, rng, self.dropout_rng)
        self.tfdec = TransformerDecoder(tcfg, vocab_size, rng, self.dropout_rng)

    def encode(self, images: Tensor, widths: Optional[Sequence[int]] = None) -> EncoderOutput:
        """Images in [0, 1], [N, 1, H, W]; `widths` are the unpadded pixel widths"""
        pixels = Tensor.wrap(standardize(images.data).astype(images.dtype, copy=False))
        fmap = self.encoder(pixels)
        features = features_to_sequence(fmap, self.proj, widths, reduction=self.encoder.reduction)
        memory = self.tfenc(features.memory, features.pad_mask if widths is not None else None)
        return EncoderOutput(memory=memory, pad_mask=features.pad_mask)

    def decode_logits(self, tokens: np.ndarray, encoded: EncoderOutput) -> Tensor:
        pad = encoded.pad_mask if encoded.pad_mask.any() else None
        return self.tfdec(tokens, encoded.memory, pad)

    def forward(self, images: Tensor, tokens: np.ndarray, widths: Optional[Sequence[int]] = None) -> Tensor:
        return self.decode_logits(tokens, self.encode(images, widths))
