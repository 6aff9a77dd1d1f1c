"""Pure fusion math: confidence terms, relative calibration, fusion weights.

Every function here is stateless and operates on plain numpy arrays. The
modality axis is always the last axis, so the same code serves a single
sample (1-D input) and a batch (2-D input [n, modalities]).

Pipeline for one sample with per-modality true-class-probability estimates
p and per-modality class logits z:

    loss_m   = -log p_m                       (predicted loss)
    mono_m   = p_m                            (self confidence)
    holo_m   = sum_{j != m} loss_j / sum_i loss_i   (cross confidence)
    belief_m = mono_m + holo_m
    du_m     = mean_c |softmax(z_m)_c - 1/C|  (certainty of the class posterior)
    rc_m     = du_m * (M-1) / sum_{j != m} du_j
    k_m      = rc_m if rc_m < 1 else 1        (only relatively uncertain
                                               modalities are damped)
    ccb_m    = belief_m * k_m
    weight   = softmax over modalities of the strategy's score
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nets import softmax, softmax_vjp

CONF_CLAMP = 1e-6
RC_EPS = 1e-12
DEGENERATE_LOSS_SUM = 1e-8

STRATEGIES = (
    "equal_weight",
    "mono_only",
    "holo_only",
    "rc_only",
    "co_belief",
    "mono_rc",
    "holo_rc",
    "ccb",
)

UNCERTAINTY_KINDS = ("du", "entropy", "mcp", "energy")


@dataclass(frozen=True)
class UncertaintyMeasure:
    """Which per-modality certainty score feeds relative calibration.

    All kinds are oriented so that larger means more certain; that lets any
    of them take the du slot in relative_calibration unchanged.
    """

    kind: str = "du"
    temperature: float = 1.0

    def __post_init__(self):
        if self.kind not in UNCERTAINTY_KINDS:
            raise ValueError(f"unknown uncertainty kind {self.kind!r}")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


def clamp_confidence(p_hat: np.ndarray) -> np.ndarray:
    """Clip probability estimates into [1e-6, 1 - 1e-6].

    The cross-confidence denominator vanishes when every estimate is exactly
    1, so estimates are pulled strictly inside (0, 1) before any log.
    """
    return np.clip(np.asarray(p_hat, dtype=np.float64), CONF_CLAMP, 1.0 - CONF_CLAMP)


def predicted_loss(p_hat: np.ndarray) -> np.ndarray:
    """Loss implied by a true-class-probability estimate: -log p."""
    return -np.log(clamp_confidence(p_hat))


def mono_confidence(p_hat: np.ndarray) -> np.ndarray:
    """Self confidence of each modality; the identity on its input.

    Kept as an explicit step so per-sample records name every quantity.
    """
    return np.asarray(p_hat, dtype=np.float64)


def holo_confidence(losses: np.ndarray) -> np.ndarray:
    """Share of the total predicted loss carried by the *other* modalities.

    Rows whose losses sum below 1e-8 return the uniform limit (M-1)/M, the
    continuous extension along equal-loss rays. Sums to M-1 across
    modalities either way.
    """
    l = np.asarray(losses, dtype=np.float64)
    if l.shape[-1] < 2:
        raise ValueError("holo_confidence needs at least two modalities")
    if np.any(l < 0):
        raise ValueError("predicted losses must be nonnegative")
    m = l.shape[-1]
    total = l.sum(axis=-1, keepdims=True)
    degenerate = total < DEGENERATE_LOSS_SUM
    safe_total = np.where(degenerate, 1.0, total)
    holo = (total - l) / safe_total
    return np.where(degenerate, (m - 1) / m, holo)


def co_belief(p_hat: np.ndarray) -> np.ndarray:
    """Mono plus holo confidence with losses implied by the estimates."""
    p = clamp_confidence(p_hat)
    return p + holo_confidence(-np.log(p))


def uniformity_of_probs(probs: np.ndarray) -> np.ndarray:
    """Mean absolute deviation of a class posterior from the uniform one.

    Zero exactly at the uniform distribution, maximal 2(C-1)/C^2 at a
    one-hot distribution; the class axis is the last one.
    """
    p = np.asarray(probs, dtype=np.float64)
    c = p.shape[-1]
    if c < 2:
        raise ValueError("need at least two classes")
    return np.mean(np.abs(p - 1.0 / c), axis=-1)


def distribution_uniformity(logits: np.ndarray) -> np.ndarray:
    """uniformity_of_probs of softmax(logits)."""
    z = np.asarray(logits, dtype=np.float64)
    if z.shape[-1] < 2:
        raise ValueError("need at least two classes")
    return uniformity_of_probs(softmax(z))


def relative_calibration(du: np.ndarray) -> np.ndarray:
    """Certainty of each modality relative to the mean of the others.

    rc_m = du_m * (M-1) / (sum_{j != m} du_j + 1e-12); for two modalities
    this is the plain ratio du_m / du_n. The epsilon guards exactly-uniform
    posteriors whose du is 0.
    """
    d = np.asarray(du, dtype=np.float64)
    if d.shape[-1] < 2:
        raise ValueError("relative_calibration needs at least two modalities")
    if np.any(d < 0):
        raise ValueError("certainty scores must be nonnegative")
    m = d.shape[-1]
    others = d.sum(axis=-1, keepdims=True) - d
    return d * (m - 1) / (others + RC_EPS)


def asymmetric_term(rc: np.ndarray) -> np.ndarray:
    """Damping factor: rc where rc < 1, else 1.

    Only the relatively uncertain modalities are scaled down; the certain
    ones keep their belief untouched.
    """
    r = np.asarray(rc, dtype=np.float64)
    if np.any(r < 0):
        raise ValueError("rc must be nonnegative")
    return np.where(r < 1.0, r, 1.0)


def calibrated_co_belief(belief: np.ndarray, k: np.ndarray) -> np.ndarray:
    b = np.asarray(belief, dtype=np.float64)
    kk = np.asarray(k, dtype=np.float64)
    if b.shape != kk.shape:
        raise ValueError(f"belief shape {b.shape} != k shape {kk.shape}")
    return b * kk


def fusion_weights(scores: np.ndarray) -> np.ndarray:
    """Softmax over the modality axis; rows sum to 1."""
    return softmax(np.asarray(scores, dtype=np.float64), axis=-1)


def fuse_logits(weights: np.ndarray, logits_list) -> np.ndarray:
    """Weighted sum of per-modality logit matrices, one weight per sample."""
    w = np.asarray(weights, dtype=np.float64)
    mats = [np.asarray(z, dtype=np.float64) for z in logits_list]
    if w.shape[-1] != len(mats):
        raise ValueError(f"{w.shape[-1]} weights for {len(mats)} modality logit blocks")
    shape = mats[0].shape
    for m, z in enumerate(mats):
        if z.shape != shape:
            raise ValueError(f"logits[{m}] shape {z.shape} != {shape}")
    if w.ndim == 1:
        return sum(w[m] * mats[m] for m in range(len(mats)))
    return sum(w[:, m : m + 1] * mats[m] for m in range(len(mats)))


def certainty_score(logits: np.ndarray, measure: UncertaintyMeasure) -> np.ndarray:
    """Per-sample certainty of a class posterior, higher = more certain.

    du:       uniformity_of_probs(softmax(z))
    entropy:  (ln C - H(softmax(z))) / ln C
    mcp:      max_c softmax(z)_c
    energy:   T * logsumexp(z / T)
    """
    z = np.asarray(logits, dtype=np.float64)
    c = z.shape[-1]
    if c < 2:
        raise ValueError("need at least two classes")
    if measure.kind == "du":
        return distribution_uniformity(z)
    if measure.kind == "entropy":
        p = softmax(z)
        ent = -np.sum(p * np.log(np.maximum(p, 1e-300)), axis=-1)
        return (np.log(c) - ent) / np.log(c)
    if measure.kind == "mcp":
        return softmax(z).max(axis=-1)
    if measure.kind == "energy":
        t = measure.temperature
        zt = z / t
        zmax = zt.max(axis=-1)
        return t * (zmax + np.log(np.sum(np.exp(zt - zmax[..., None]), axis=-1)))
    raise ValueError(f"unknown uncertainty kind {measure.kind!r}")


def certainty_score_vjp(logits: np.ndarray, measure: UncertaintyMeasure,
                        d_score: np.ndarray) -> np.ndarray:
    """d(loss)/d(logits) given d(loss)/d(certainty score).

    Subgradients are used at the measure's kinks (du's absolute values, mcp's
    argmax ties), matching the forward convention sign(0) = 0.
    """
    z = np.asarray(logits, dtype=np.float64)
    g = np.asarray(d_score, dtype=np.float64)[..., None]
    c = z.shape[-1]
    if measure.kind == "du":
        p = softmax(z)
        d_p = g * np.sign(p - 1.0 / c) / c
        return softmax_vjp(p, d_p)
    if measure.kind == "entropy":
        p = softmax(z)
        d_p = g * (np.log(np.maximum(p, 1e-300)) + 1.0) / np.log(c)
        return softmax_vjp(p, d_p)
    if measure.kind == "mcp":
        p = softmax(z)
        d_p = np.zeros_like(p)
        top = p.argmax(axis=-1)
        idx = np.indices(top.shape)
        d_p[(*idx, top)] = g[..., 0]
        return softmax_vjp(p, d_p)
    if measure.kind == "energy":
        return g * softmax(z / measure.temperature)
    raise ValueError(f"unknown uncertainty kind {measure.kind!r}")


@dataclass
class FusionBreakdown:
    """Every intermediate of the weight pipeline, per sample and modality.

    All fields are [n, M] arrays; `weight` is the strategy's final mixing
    weight and sums to 1 across modalities.
    """

    p_hat: np.ndarray
    pred_loss: np.ndarray
    mono_conf: np.ndarray
    holo_conf: np.ndarray
    co_belief: np.ndarray
    du: np.ndarray
    rc: np.ndarray
    k: np.ndarray
    ccb: np.ndarray
    weight: np.ndarray

    def sample(self, i: int) -> dict:
        return {
            name: getattr(self, name)[i].copy()
            for name in (
                "p_hat", "pred_loss", "mono_conf", "holo_conf", "co_belief",
                "du", "rc", "k", "ccb", "weight",
            )
        }


def strategy_scores(strategy: str, mono: np.ndarray, holo: np.ndarray,
                    k: np.ndarray) -> np.ndarray:
    """Pre-softmax fusion score for each strategy."""
    if strategy == "equal_weight":
        return np.zeros_like(mono)
    if strategy == "mono_only":
        return mono
    if strategy == "holo_only":
        return holo
    if strategy == "rc_only":
        return k
    if strategy == "co_belief":
        return mono + holo
    if strategy == "mono_rc":
        return mono * k
    if strategy == "holo_rc":
        return holo * k
    if strategy == "ccb":
        return (mono + holo) * k
    raise ValueError(f"unknown fusion strategy {strategy!r}, expected one of {STRATEGIES}")


def fusion_breakdown(p_hat: np.ndarray, logits_list, strategy: str = "ccb",
                     measure: UncertaintyMeasure = UncertaintyMeasure()) -> FusionBreakdown:
    """Run the whole weight pipeline for a batch.

    p_hat: [n, M] true-class-probability estimates (clamped internally).
    logits_list: M matrices [n, C] of per-modality class logits.
    """
    p_raw = np.asarray(p_hat, dtype=np.float64)
    if p_raw.ndim != 2:
        raise ValueError("p_hat must be [n, modalities]")
    n, m = p_raw.shape
    if len(logits_list) != m:
        raise ValueError(f"{m} confidence columns for {len(logits_list)} logit blocks")
    p = clamp_confidence(p_raw)
    losses = -np.log(p)
    mono = mono_confidence(p)
    holo = holo_confidence(losses)
    belief = mono + holo
    # relative_calibration divides certainty mass, so its input must be
    # nonnegative; of the supported measures only energy can dip below zero
    # and gets floored here.
    du = np.maximum(
        np.stack([certainty_score(z, measure) for z in logits_list], axis=1), 0.0
    )
    rc = relative_calibration(du)
    k = asymmetric_term(rc)
    ccb = calibrated_co_belief(belief, k)
    scores = strategy_scores(strategy, mono, holo, k)
    weight = fusion_weights(scores)
    return FusionBreakdown(
        p_hat=p, pred_loss=losses, mono_conf=mono, holo_conf=holo,
        co_belief=belief, du=du, rc=rc, k=k, ccb=ccb, weight=weight,
    )
