"""Autoregressive sequence models over token ids: smoothed n-gram and a
small GPT-style transformer behind one backend-agnostic interface."""

from .base import Generator, apply_temperature, sample_timeline
from .checkpoint import deserialize, serialize
from .ngram import NGramGenerator
from .training import TrainConfig, train_local
from .transformer import TransformerGenerator

__all__ = [
    "Generator",
    "NGramGenerator",
    "TransformerGenerator",
    "TrainConfig",
    "train_local",
    "apply_temperature",
    "sample_timeline",
    "serialize",
    "deserialize",
]
