"""
Handwritten Urdu line recognition: ResNet features, transformer
encoder-decoder, character-level decoding and CER/WER scoring on a numpy
autodiff engine.
"""

__version__ = "1.0.0"
