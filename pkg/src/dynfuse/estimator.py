"""Scikit-learn style front end for the fusion classifier.

X is a list of per-modality feature matrices sharing the sample axis. The
estimator follows the usual conventions (all constructor args stored
verbatim, state learned by fit carries a trailing underscore), so it works
with get_params/set_params and clone.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .datagen import MultimodalBatch
from .fusion import UncertaintyMeasure
from .model import FusionModel, ModelConfig, TrainSettings, train_model
from .validation import as_label_vector, check_modality_features


class FusionClassifier(BaseEstimator, ClassifierMixin):
    """Multimodal classifier with dynamically predicted fusion weights.

    Parameters mirror the underlying model and trainer; `strategy` picks the
    weight pipeline ("ccb" is the full one, "equal_weight" is static late
    fusion, "mono_only"/"holo_only"/... are its ablations).
    """

    def __init__(self, strategy="ccb", predictor_target="p_true", uncertainty="du",
                 energy_temperature=1.0, detach_weights=False,
                 encoder_hidden=(64, 32), predictor_hidden=(16,), dropout=0.1,
                 lr=1e-3, beta1=0.9, beta2=0.999, weight_decay=0.01,
                 batch_size=16, epochs=100, seed=0):
        self.strategy = strategy
        self.predictor_target = predictor_target
        self.uncertainty = uncertainty
        self.energy_temperature = energy_temperature
        self.detach_weights = detach_weights
        self.encoder_hidden = encoder_hidden
        self.predictor_hidden = predictor_hidden
        self.dropout = dropout
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed

    def _validate(self, X, y=None):
        feats = check_modality_features(X, "X")
        if y is None:
            return feats, None
        labels = as_label_vector(np.asarray(y), name="y")
        if labels.shape[0] != feats[0].shape[0]:
            raise ValueError("X and y disagree on the sample count")
        return feats, labels

    def fit(self, X, y):
        feats, labels = self._validate(X, y)
        self.classes_ = np.unique(labels)
        if self.classes_.size < 2:
            raise ValueError("need at least two classes")
        encoded = np.searchsorted(self.classes_, labels)
        config = ModelConfig(
            n_classes=int(self.classes_.size),
            n_modalities=len(feats),
            feature_dims=tuple(f.shape[1] for f in feats),
            encoder_hidden=tuple(self.encoder_hidden),
            predictor_hidden=tuple(self.predictor_hidden),
            strategy=self.strategy,
            predictor_target=self.predictor_target,
            uncertainty=UncertaintyMeasure(self.uncertainty, self.energy_temperature),
            detach_weights=self.detach_weights,
            dropout=self.dropout,
        )
        rng = np.random.default_rng(self.seed)
        self.model_ = FusionModel(config, rng)
        settings = TrainSettings(
            lr=self.lr, beta1=self.beta1, beta2=self.beta2,
            weight_decay=self.weight_decay, epochs=self.epochs,
            batch_size=self.batch_size,
        )
        batch = MultimodalBatch(features=feats, labels=encoded)
        self.history_ = train_model(self.model_, batch, None, settings, rng)
        self.n_features_in_ = int(sum(f.shape[1] for f in feats))
        return self

    def _require_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("this FusionClassifier is not fitted yet")

    def predict(self, X):
        self._require_fitted()
        feats, _ = self._validate(X)
        pred, _ = self.model_.predict(list(feats))
        return self.classes_[pred]

    def predict_proba(self, X):
        """Softmax of the fused logits, columns ordered like classes_."""
        self._require_fitted()
        feats, _ = self._validate(X)
        result = self.model_.forward_full(list(feats), train_mode=False)
        return result.fused_probs

    def fusion_report(self, X):
        """Per-sample weight-pipeline intermediates for inspection."""
        self._require_fitted()
        feats, _ = self._validate(X)
        result = self.model_.forward_full(list(feats), train_mode=False)
        return result.breakdown
