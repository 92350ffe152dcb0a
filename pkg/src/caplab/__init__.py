"""caplab: a desk-scale lab for subset-restricted likelihood objectives."""

__version__ = "0.1.0"

from .corpus import CorpusConfig, Sample, Scene, Vocabulary, generate_corpus
from .decoder import DecodeConfig, decode
from .model import ModelConfig, init_params
from .objectives import SubsetMask, build_mask, mixed_loss, mle_loss, smile_loss
from .trainer import TrainConfig, train, two_stage

__all__ = [
    "CorpusConfig",
    "Sample",
    "Scene",
    "Vocabulary",
    "generate_corpus",
    "DecodeConfig",
    "decode",
    "ModelConfig",
    "init_params",
    "SubsetMask",
    "build_mask",
    "mle_loss",
    "smile_loss",
    "mixed_loss",
    "TrainConfig",
    "train",
    "two_stage",
]
