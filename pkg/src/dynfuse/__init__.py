"""Confidence-weighted dynamic late fusion for multimodal classifiers."""

from .datagen import GeneratorSpec, MultimodalBatch, NoiseSpec, corrupt, generate
from .estimator import FusionClassifier
from .fusion import FusionBreakdown, UncertaintyMeasure
from .model import FusionModel, ModelConfig, TrainSettings, train_model

__version__ = "0.1.0"

__all__ = [
    "FusionBreakdown",
    "FusionClassifier",
    "FusionModel",
    "GeneratorSpec",
    "ModelConfig",
    "MultimodalBatch",
    "NoiseSpec",
    "TrainSettings",
    "UncertaintyMeasure",
    "corrupt",
    "generate",
    "train_model",
    "__version__",
]
