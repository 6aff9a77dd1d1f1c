"""Evaluation and diagnostics: weight-loss covariances, ensemble scores,
accuracy summaries, conflict resolution, and weight-convergence tracking.

Covariances use the population (1/n) normalization throughout, so tests
against hand-computed values are exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nets import PROB_FLOOR, softmax


def empirical_cov(xs, ys) -> float:
    """Population covariance (1/n) of two equal-length samples."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"need two equal-length vectors, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise ValueError("covariance needs at least two samples")
    return float(np.mean((x - x.mean()) * (y - y.mean())))


def modality_losses(logits_list, labels) -> np.ndarray:
    """True per-sample, per-modality loss: -log softmax(logits)[label]."""
    y = np.asarray(labels)
    cols = []
    for z in logits_list:
        p = softmax(np.asarray(z, dtype=np.float64))
        p_true = p[np.arange(p.shape[0]), y]
        cols.append(-np.log(np.maximum(p_true, PROB_FLOOR)))
    return np.stack(cols, axis=1)


def weight_loss_covariances(weights: np.ndarray, losses: np.ndarray) -> np.ndarray:
    """Matrix R with R[m, j] = Cov(weight_m, loss_j) over the sample axis."""
    w = np.asarray(weights, dtype=np.float64)
    l = np.asarray(losses, dtype=np.float64)
    if w.shape != l.shape or w.ndim != 2:
        raise ValueError(f"weights {w.shape} and losses {l.shape} must both be [n, M]")
    if w.shape[0] < 2:
        raise ValueError("need at least two samples")
    wc = w - w.mean(axis=0)
    lc = l - l.mean(axis=0)
    return wc.T @ lc / w.shape[0]


def aggregate_covariance(weights: np.ndarray, losses: np.ndarray) -> float:
    """Signed combination of weight-loss covariances over an evaluation set.

    sum_m ( Cov(w_m, l_m) - (M-1) * sum_{j != m} Cov(w_m, l_j) ). Negative
    values indicate the weighting reduces the model's generalization-error
    bound.
    """
    r = weight_loss_covariances(weights, losses)
    m = r.shape[0]
    mono = np.trace(r)
    holo = r.sum() - mono
    return float(mono - (m - 1) * holo)


def gdp(ac_values) -> float:
    """Fraction of models with strictly negative aggregate covariance."""
    vals = np.asarray(ac_values, dtype=np.float64)
    if vals.size == 0:
        raise ValueError("gdp of an empty collection")
    return float(np.mean(vals < 0.0))


def avg_worst_accuracy(accuracies):
    """(mean, min, sample stddev) over per-seed accuracies."""
    a = np.asarray(accuracies, dtype=np.float64)
    if a.size == 0:
        raise ValueError("no accuracies given")
    std = float(a.std(ddof=1)) if a.size > 1 else 0.0
    return float(a.mean()), float(a.min()), std


def conflict_resolution_rate(logits_list, fused_predictions, labels):
    """(conflict fraction, accuracy of the fused decision on conflicts).

    A sample is a conflict when the per-modality argmax decisions are not
    all equal. The second value is None when there are no conflicts.
    """
    y = np.asarray(labels)
    fused = np.asarray(fused_predictions)
    preds = np.stack([np.asarray(z).argmax(axis=1) for z in logits_list], axis=1)
    conflict = ~np.all(preds == preds[:, :1], axis=1)
    frac = float(conflict.mean()) if y.size else 0.0
    if not conflict.any():
        return frac, None
    resolved = float(np.mean(fused[conflict] == y[conflict]))
    return frac, resolved


def delta_omega(prev_weights: np.ndarray, curr_weights: np.ndarray) -> float:
    """Mean absolute elementwise change between two weight matrices."""
    a = np.asarray(prev_weights, dtype=np.float64)
    b = np.asarray(curr_weights, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"weight shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(b - a)))


@dataclass
class GdpReport:
    """Ensemble summary for one (strategy, noise level) cell."""

    strategy: str
    noise_label: str
    ac_values: list = field(default_factory=list)

    @property
    def gdp(self) -> float:
        return gdp(self.ac_values)

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "noise": self.noise_label,
            "n_models": len(self.ac_values),
            "ac_values": [float(v) for v in self.ac_values],
            "gdp": self.gdp,
        }
