from .data import RefinerSample, build_refiner_dataset, load_refiner_corpus, save_refiner_corpus
from .model import ConvNeXtBlock, RefinerBank, RefinerConfig, RefinerNet
from .train import RefinerTrainConfig, RefinerTrainResult, train_refiner

__all__ = [
    "ConvNeXtBlock",
    "RefinerBank",
    "RefinerConfig",
    "RefinerNet",
    "RefinerSample",
    "RefinerTrainConfig",
    "RefinerTrainResult",
    "build_refiner_dataset",
    "load_refiner_corpus",
    "save_refiner_corpus",
    "train_refiner",
]
