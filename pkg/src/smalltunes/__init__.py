"""Skeleton-conditioned melody generation for short folk tunes, in pure numpy."""

from .corpus import Melody, NoteEvent, make_synthetic_corpus, parse_midi, write_midi
from .errors import ContractViolation, DataError, SmallTunesError
from .generation import GenConfig, extract_prompt, generate
from .model import ModelConfig, SkeletonTransformer
from .representation import TokenSequence, decode, encode
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "ContractViolation", "DataError", "GenConfig", "Melody", "ModelConfig", "NoteEvent",
    "SmallTunesError", "SkeletonTransformer", "TokenSequence", "TrainConfig", "decode", "encode",
    "extract_prompt", "generate", "make_synthetic_corpus", "parse_midi", "train", "write_midi",
]
