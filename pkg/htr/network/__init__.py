from htr.network.decoding import beam_decode, beam_search, greedy_decode
from htr.network.model import HTRModel
from htr.network.resnet import EncoderOutput, ResNet, expected_parameter_count, features_to_sequence, import_weights
from htr.network.transformer import AttentionMask, MultiHeadAttention, positional_encoding

__all__ = [
    "AttentionMask",
    "EncoderOutput",
    "HTRModel",
    "MultiHeadAttention",
    "ResNet",
    "beam_decode",
    "beam_search",
    "expected_parameter_count",
    "features_to_sequence",
    "greedy_decode",
    "import_weights",
    "positional_encoding",
]
