import numpy as np
import pytest

from dynfuse.datagen import GeneratorSpec, generate
from dynfuse.model import FusionModel, ModelConfig


def toy_spec(seed=0, **kw):
    """Small, cleanly separable two-modality problem for training oracles."""
    base = dict(
        n_classes=3,
        n_modalities=2,
        feature_dims=(6, 6),
        signal_scales=(1.5, 1.5),
        noise_scales=(0.2, 0.2),
        flip_rates=(0.0, 0.0),
        train_size=20,
        val_size=20,
        test_size=20,
        seed=seed,
    )
    base.update(kw)
    return GeneratorSpec(**base)


def tiny_model(seed=1006, **kw):
    """Small model whose gradient-check fixture avoids every kink."""
    base = dict(
        n_classes=3,
        n_modalities=2,
        feature_dims=(5, 4),
        encoder_hidden=(8, 6),
        predictor_hidden=(4,),
        dropout=0.0,
        strategy="ccb",
    )
    base.update(kw)
    return FusionModel(ModelConfig(**base), np.random.default_rng(seed))


def tiny_fixture(seed=6, n=8):
    """Inputs/labels matched to tiny_model with safe kink margins."""
    r = np.random.default_rng(seed)
    xs = [r.normal(size=(n, 5)), r.normal(size=(n, 4))]
    y = r.integers(0, 3, n)
    return xs, y


@pytest.fixture
def toy_data():
    return generate(toy_spec())
