"""Guided GAN for log-magnitude spectrograms.

A GAN whose generator is steered by a small labelled guidance set, with
an encoder/feature-extractor pair that gives a class-structured
representation of real samples.
"""
from .data import make_guidance_split, read_spectrogram, write_spectrogram
from .estimators import BigGAN, GuidedGAN
from .exceptions import (
    ConfigError,
    DataError,
    FormatError,
    GganError,
    LengthError,
    RangeError,
    ShapeError,
    TrainingHalted,
)
from .metrics import SpectrogramClassifier, evaluate_generation, fid, inception_score
from .spectro import FULL_SCALE, TOY_SCALE, SpectroConfig, SpectrogramTransformer
from .trainer import GganTrainer, TrainingConfig

__version__ = "0.1.0"

__all__ = [
    "BigGAN", "ConfigError", "DataError", "FULL_SCALE", "FormatError", "GganError",
    "GganTrainer", "GuidedGAN", "LengthError", "RangeError", "ShapeError", "SpectroConfig",
    "SpectrogramClassifier", "SpectrogramTransformer", "TOY_SCALE", "TrainingConfig",
    "TrainingHalted", "evaluate_generation", "fid", "inception_score", "make_guidance_split",
    "read_spectrogram", "write_spectrogram",
]
