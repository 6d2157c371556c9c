from .fsq import ScalarQuantizer, pack_index, unpack_index
from .model import TokenGrid, TokenizerConfig, UniversalTokenizer, extend_tokenizer
from .train import TokenizerTrainConfig, TrainResult, train_tokenizer, validation_loss

__all__ = [
    "ScalarQuantizer",
    "TokenGrid",
    "TokenizerConfig",
    "TokenizerTrainConfig",
    "TrainResult",
    "UniversalTokenizer",
    "extend_tokenizer",
    "pack_index",
    "train_tokenizer",
    "unpack_index",
    "validation_loss",
]
