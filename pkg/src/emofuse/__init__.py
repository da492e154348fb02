"""Multimodal (image + text) emotion classifier and emotion-structure analyses."""

from .dataset import EMOTION_WORDS, Emotion, LabeledExample
from .embeddings import EmbeddingTable, encode_text, tokenize
from .encoders import ImageEncoderConfig
from .model import DeepSentimentModel, TrainConfig, evaluate, forward, train

__version__ = "0.1.0"

__all__ = [
    "DeepSentimentModel",
    "EMOTION_WORDS",
    "EmbeddingTable",
    "Emotion",
    "ImageEncoderConfig",
    "LabeledExample",
    "TrainConfig",
    "encode_text",
    "evaluate",
    "forward",
    "tokenize",
    "train",
    "__version__",
]
