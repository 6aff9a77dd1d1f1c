"""End-to-end multimodal classifier with confidence-weighted late fusion.

Per modality: encoder MLP -> feature, linear head -> class logits, and a
small confidence predictor -> estimate of the true-class probability. The
fusion pipeline turns those estimates and the logits into per-sample mixing
weights; the fused prediction is the weighted sum of the modality logits.

Training minimizes fused cross-entropy + per-modality cross-entropy + the
predictor regression loss in one backward pass, written out by hand. Unless
detach_weights is set, gradients flow through the mixing weights back into
both the predictors and the heads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import fusion
from .datagen import MultimodalBatch
from .fusion import FusionBreakdown, UncertaintyMeasure
from .nets import (
    AdamState,
    GradCheckReport,
    adam_step,
    compare_gradients,
    cross_entropy,
    make_mlp,
    mse,
    softmax,
    softmax_vjp,
)
from .validation import as_label_vector, check_modality_features

CKPT_MAGIC = "DYNFUSE-CKPT 1"

PREDICTOR_TARGETS = ("p_true", "loss")


@dataclass(frozen=True)
class ModelConfig:
    n_classes: int
    n_modalities: int
    feature_dims: tuple
    encoder_hidden: tuple = (64, 32)
    predictor_hidden: tuple = (16,)
    strategy: str = "ccb"
    predictor_target: str = "p_true"
    uncertainty: UncertaintyMeasure = field(default_factory=UncertaintyMeasure)
    detach_weights: bool = False
    dropout: float = 0.1

    def __post_init__(self):
        if self.n_classes < 2 or self.n_modalities < 2:
            raise ValueError("need at least two classes and two modalities")
        object.__setattr__(self, "feature_dims", tuple(self.feature_dims))
        object.__setattr__(self, "encoder_hidden", tuple(self.encoder_hidden))
        object.__setattr__(self, "predictor_hidden", tuple(self.predictor_hidden))
        if len(self.feature_dims) != self.n_modalities:
            raise ValueError("feature_dims needs one entry per modality")
        if not self.encoder_hidden:
            raise ValueError("encoder needs at least one hidden layer")
        if self.strategy not in fusion.STRATEGIES:
            raise ValueError(f"unknown fusion strategy {self.strategy!r}")
        if self.predictor_target not in PREDICTOR_TARGETS:
            raise ValueError(f"unknown predictor target {self.predictor_target!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


def p_true_target(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Softmax probability of the true class, one value per sample."""
    z = np.asarray(logits, dtype=np.float64)
    y = as_label_vector(labels, n_classes=z.shape[1], name="labels")
    return softmax(z)[np.arange(z.shape[0]), y]


@dataclass
class ForwardResult:
    logits: list  # per modality [n, C]
    probs: list  # softmax of each
    raw_pred: np.ndarray  # [n, M] predictor outputs in their native domain
    p_conf: np.ndarray  # [n, M] probability estimates before clamping
    breakdown: FusionBreakdown
    fused_logits: np.ndarray
    fused_probs: np.ndarray
    train_mode: bool = False
    overridden: bool = False

    @property
    def n(self) -> int:
        return self.fused_logits.shape[0]


@dataclass
class LossReport:
    fused_ce: float
    unimodal_ce: tuple
    predictor_loss: float

    @property
    def total(self) -> float:
        return self.fused_ce + sum(self.unimodal_ce) + self.predictor_loss


class FusionModel:
    """The trainable multimodal classifier; one instance per training run."""

    def __init__(self, config: ModelConfig, rng):
        self.config = config
        self.encoders = []
        self.heads = []
        self.predictors = []
        pred_final = "sigmoid" if config.predictor_target == "p_true" else "softplus"
        for m in range(config.n_modalities):
            enc_dims = [config.feature_dims[m], *config.encoder_hidden]
            self.encoders.append(
                make_mlp(enc_dims, ["relu"] * len(config.encoder_hidden), rng,
                         dropout=config.dropout)
            )
            feat = config.encoder_hidden[-1]
            self.heads.append(
                make_mlp([feat, config.n_classes], ["identity"], rng)
            )
            pred_dims = [feat, *config.predictor_hidden, 1]
            pred_acts = ["relu"] * len(config.predictor_hidden) + [pred_final]
            self.predictors.append(make_mlp(pred_dims, pred_acts, rng))

    def networks(self):
        for m in range(self.config.n_modalities):
            yield f"enc{m}", self.encoders[m]
            yield f"head{m}", self.heads[m]
            yield f"pred{m}", self.predictors[m]

    def _check_features(self, features):
        feats = check_modality_features(features, "features")
        if len(feats) != self.config.n_modalities:
            raise ValueError(
                f"model expects {self.config.n_modalities} modalities, got {len(feats)}"
            )
        for m, x in enumerate(feats):
            if x.shape[1] != self.config.feature_dims[m]:
                raise ValueError(
                    f"modality {m} has {x.shape[1]} features, model expects "
                    f"{self.config.feature_dims[m]}"
                )
        return feats

    def forward_full(self, features, train_mode: bool = False, rng=None,
                     p_hat_override=None) -> ForwardResult:
        """Full forward pass: per-modality outputs, weight pipeline, fusion.

        p_hat_override replaces the predictors' probability estimates in the
        weight pipeline (a test oracle hook); backward is unsupported then.
        """
        feats = self._check_features(features)
        logits = []
        raw_cols = []
        for m in range(self.config.n_modalities):
            h = self.encoders[m].forward(feats[m], train_mode=train_mode, rng=rng)
            logits.append(self.heads[m].forward(h))
            raw_cols.append(self.predictors[m].forward(h)[:, 0])
        raw = np.stack(raw_cols, axis=1)
        if self.config.predictor_target == "p_true":
            p_conf = raw
        else:
            p_conf = np.exp(-raw)
        overridden = p_hat_override is not None
        if overridden:
            p_conf = np.asarray(p_hat_override, dtype=np.float64)
            if p_conf.shape != raw.shape:
                raise ValueError(f"override shape {p_conf.shape}, expected {raw.shape}")
        breakdown = fusion.fusion_breakdown(
            p_conf, logits, strategy=self.config.strategy,
            measure=self.config.uncertainty,
        )
        fused = fusion.fuse_logits(breakdown.weight, logits)
        return ForwardResult(
            logits=logits,
            probs=[softmax(z) for z in logits],
            raw_pred=raw,
            p_conf=p_conf,
            breakdown=breakdown,
            fused_logits=fused,
            fused_probs=softmax(fused),
            train_mode=train_mode,
            overridden=overridden,
        )

    def _predictor_targets(self, result: ForwardResult, labels) -> np.ndarray:
        """Regression target per modality, a function of the head outputs.

        The overall loss is one closed form, so gradients flow through the
        target too (no stop-gradient anywhere).
        """
        cols = []
        for m in range(self.config.n_modalities):
            pt = result.probs[m][np.arange(result.n), labels]
            if self.config.predictor_target == "p_true":
                cols.append(pt)
            else:
                cols.append(-np.log(fusion.clamp_confidence(pt)))
        return np.stack(cols, axis=1)

    def compute_loss(self, result: ForwardResult, labels) -> LossReport:
        y = as_label_vector(labels, n_classes=self.config.n_classes, name="labels")
        if y.shape[0] != result.n:
            raise ValueError("labels do not match the forward batch")
        fused_ce = cross_entropy(result.fused_probs, y)
        uni = tuple(cross_entropy(p, y) for p in result.probs)
        targets = self._predictor_targets(result, y)
        pred_loss = sum(
            mse(result.raw_pred[:, m], targets[:, m])
            for m in range(self.config.n_modalities)
        )
        return LossReport(fused_ce=fused_ce, unimodal_ce=uni, predictor_loss=pred_loss)

    def backward(self, result: ForwardResult, labels) -> dict:
        """Gradients of compute_loss().total for every network, by hand.

        Requires the caches left by the forward pass that produced `result`.
        Returns {"enc0": NetGradients, "head0": ..., ...}.
        """
        if result.overridden:
            raise RuntimeError("backward is not defined for overridden confidences")
        cfg = self.config
        n, m_count = result.raw_pred.shape
        y = as_label_vector(labels, n_classes=cfg.n_classes, name="labels")
        onehot = np.zeros((n, cfg.n_classes))
        onehot[np.arange(n), y] = 1.0

        bd = result.breakdown
        d_fused = (result.fused_probs - onehot) / n
        d_logits = [
            bd.weight[:, m : m + 1] * d_fused + (result.probs[m] - onehot) / n
            for m in range(m_count)
        ]

        d_mono = np.zeros((n, m_count))
        d_holo = np.zeros((n, m_count))
        d_k = np.zeros((n, m_count))
        if not cfg.detach_weights and cfg.strategy != "equal_weight":
            d_w = np.stack(
                [np.sum(d_fused * result.logits[m], axis=1) for m in range(m_count)],
                axis=1,
            )
            d_scores = softmax_vjp(bd.weight, d_w)
            s = cfg.strategy
            if s == "mono_only":
                d_mono = d_scores
            elif s == "holo_only":
                d_holo = d_scores
            elif s == "rc_only":
                d_k = d_scores
            elif s == "co_belief":
                d_mono = d_scores.copy()
                d_holo = d_scores.copy()
            elif s == "mono_rc":
                d_mono = d_scores * bd.k
                d_k = d_scores * bd.mono_conf
            elif s == "holo_rc":
                d_holo = d_scores * bd.k
                d_k = d_scores * bd.holo_conf
            elif s == "ccb":
                d_belief = d_scores * bd.k
                d_k = d_scores * bd.co_belief
                d_mono = d_belief.copy()
                d_holo = d_belief.copy()

        # k = rc where rc < 1 else 1; rc = du * (M-1) / (others + eps)
        if np.any(d_k):
            d_rc = d_k * (bd.rc < 1.0)
            others = bd.du.sum(axis=1, keepdims=True) - bd.du
            denom = others + fusion.RC_EPS
            a = (m_count - 1) / denom
            b = bd.rc / denom
            t_sum = np.sum(d_rc * b, axis=1, keepdims=True)
            # bd.du is the raw certainty floored at 0; the floor blocks the
            # gradient wherever it was active.
            d_du = (d_rc * a + d_rc * b - t_sum) * (bd.du > 0.0)
            for m in range(m_count):
                d_logits[m] += fusion.certainty_score_vjp(
                    result.logits[m], cfg.uncertainty, d_du[:, m]
                )

        # holo = (S - l) / S with the degenerate rows constant
        p_clamped = bd.p_hat
        d_p_clamped = d_mono.copy()
        if np.any(d_holo):
            losses = bd.pred_loss
            s_tot = losses.sum(axis=1, keepdims=True)
            live = (s_tot >= fusion.DEGENERATE_LOSS_SUM).astype(np.float64)
            g_sum = np.sum(d_holo * losses, axis=1, keepdims=True)
            safe = np.where(s_tot > 0, s_tot, 1.0)
            d_losses = (g_sum / safe**2 - d_holo / safe) * live
            d_p_clamped += d_losses * (-1.0 / p_clamped)

        clamp_live = (
            (result.p_conf > fusion.CONF_CLAMP)
            & (result.p_conf < 1.0 - fusion.CONF_CLAMP)
        ).astype(np.float64)
        d_p_conf = d_p_clamped * clamp_live

        targets = self._predictor_targets(result, y)
        d_raw = 2.0 * (result.raw_pred - targets) / n
        if cfg.predictor_target == "p_true":
            d_raw += d_p_conf
        else:
            d_raw += d_p_conf * (-np.exp(-result.raw_pred))

        # The regression target p_true = softmax(head)[y] moves with the
        # heads; push the MSE's target-side gradient into the logits.
        d_target = -2.0 * (result.raw_pred - targets) / n
        p_true_cols = np.stack(
            [result.probs[m][np.arange(n), y] for m in range(m_count)], axis=1
        )
        if cfg.predictor_target == "p_true":
            d_p_true = d_target
        else:
            inside = (
                (p_true_cols > fusion.CONF_CLAMP)
                & (p_true_cols < 1.0 - fusion.CONF_CLAMP)
            ).astype(np.float64)
            d_p_true = d_target * inside * (
                -1.0 / fusion.clamp_confidence(p_true_cols)
            )
        for m in range(m_count):
            d_logits[m] += (d_p_true[:, m] * p_true_cols[:, m])[:, None] * (
                onehot - result.probs[m]
            )

        grads = {}
        for m in range(m_count):
            g_head = self.heads[m].backward(d_logits[m])
            g_pred = self.predictors[m].backward(d_raw[:, m : m + 1])
            g_enc = self.encoders[m].backward(g_head.input + g_pred.input)
            grads[f"enc{m}"] = g_enc
            grads[f"head{m}"] = g_head
            grads[f"pred{m}"] = g_pred
        return grads

    def predict(self, features):
        """Fused class decision per sample; ties go to the lowest index."""
        result = self.forward_full(features, train_mode=False)
        return result.fused_logits.argmax(axis=1), result

    def make_optimizer(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                       weight_decay: float = 0.0, predictor_lr: float | None = None) -> dict:
        """One Adam state per parameter group (network).

        predictor_lr lets the confidence predictors train at their own rate,
        as is common when the rest of the model uses a larger one.
        """
        return {
            name: AdamState(
                lr=predictor_lr if predictor_lr is not None and name.startswith("pred") else lr,
                beta1=beta1, beta2=beta2, weight_decay=weight_decay,
            )
            for name, _ in self.networks()
        }

    def train_step(self, features, labels, optimizer: dict, rng) -> LossReport:
        """One forward/backward/Adam update on a batch."""
        result = self.forward_full(features, train_mode=True, rng=rng)
        report = self.compute_loss(result, labels)
        if not np.isfinite(report.total):
            raise FloatingPointError(
                f"non-finite training loss: fused={report.fused_ce!r} "
                f"unimodal={report.unimodal_ce!r} predictor={report.predictor_loss!r}"
            )
        grads = self.backward(result, labels)
        for name, net in self.networks():
            g = grads[name]
            flat = []
            for i in range(len(net.layers)):
                flat.append(g.weights[i])
                flat.append(g.biases[i])
            adam_step(net.parameters(), flat, optimizer[name])
            net.invalidate_cache()
        return report

    def parameter_dict(self) -> dict:
        out = {}
        for name, net in self.networks():
            for i, layer in enumerate(net.layers):
                out[f"{name}.layer{i}.weight"] = layer.weight
                out[f"{name}.layer{i}.bias"] = layer.bias
        return out

    def gradient_check(self, features, labels, h: float = 1e-5,
                       tol: float = 1e-4) -> GradCheckReport:
        """Finite-difference check of the composite loss, weight path included.

        Only meaningful with detach_weights=False: detaching drops the
        weight-path term from backward on purpose, so the modified gradient
        cannot match a probe of the unmodified loss.
        """
        feats = self._check_features(features)

        def loss_fn():
            res = self.forward_full(feats, train_mode=False)
            return self.compute_loss(res, labels).total

        result = self.forward_full(feats, train_mode=False)
        grads = self.backward(result, labels)
        analytic = {}
        for name, net in self.networks():
            for i in range(len(net.layers)):
                analytic[f"{name}.layer{i}.weight"] = grads[name].weights[i]
                analytic[f"{name}.layer{i}.bias"] = grads[name].biases[i]
        return compare_gradients(self.parameter_dict(), loss_fn, analytic, h=h, tol=tol)

    def save(self, path) -> None:
        """Checkpoint: magic line, JSON meta line, then raw float64 arrays.

        Arrays follow in the order listed in the meta's "arrays" field;
        round-trips are bit-exact.
        """
        cfg = asdict(self.config)
        names = list(self.parameter_dict())
        arrays = self.parameter_dict()
        meta = {
            "config": cfg,
            "arrays": [[name, list(arrays[name].shape)] for name in names],
        }
        with open(path, "wb") as fh:
            fh.write((CKPT_MAGIC + "\n").encode("ascii"))
            fh.write((json.dumps(meta, sort_keys=True) + "\n").encode("utf-8"))
            for name in names:
                fh.write(arrays[name].astype("<f8").tobytes(order="C"))

    @classmethod
    def load(cls, path) -> "FusionModel":
        with open(path, "rb") as fh:
            magic = fh.readline().decode("ascii", errors="replace").rstrip("\n")
            if magic != CKPT_MAGIC:
                raise ValueError(f"not a checkpoint or unsupported version: {magic!r}")
            meta = json.loads(fh.readline().decode("utf-8"))
            payload = fh.read()
        cfg_dict = dict(meta["config"])
        cfg_dict["uncertainty"] = UncertaintyMeasure(**cfg_dict["uncertainty"])
        for key in ("feature_dims", "encoder_hidden", "predictor_hidden"):
            cfg_dict[key] = tuple(cfg_dict[key])
        config = ModelConfig(**cfg_dict)
        model = cls(config, np.random.default_rng(0))
        params = model.parameter_dict()
        off = 0
        for name, shape in meta["arrays"]:
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(payload, dtype="<f8", count=count, offset=off)
            off += count * 8
            params[name][...] = arr.reshape(shape)
        if off != len(payload):
            raise ValueError("checkpoint payload size does not match its manifest")
        return model


@dataclass
class TrainSettings:
    lr: float = 1e-3
    predictor_lr: float | None = None  # None: same as lr
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    epochs: int = 100
    batch_size: int = 16


@dataclass
class EpochRecord:
    epoch: int
    total: float
    fused_ce: float
    unimodal_ce: tuple
    predictor_loss: float
    val_accuracy: float
    delta_omega: float


def _index_batch(batch: MultimodalBatch, idx):
    return [f[idx] for f in batch.features], batch.labels[idx]


def train_model(model: FusionModel, train_batch: MultimodalBatch,
                val_batch: MultimodalBatch | None, settings: TrainSettings,
                rng) -> list:
    """Epoch loop: seeded shuffling, per-batch Adam steps, per-epoch tracking.

    The weight-change diagnostic is computed on the validation split (the
    train split when none is given), against the previous epoch's weights.
    """
    ref = val_batch if val_batch is not None else train_batch
    optimizer = model.make_optimizer(
        lr=settings.lr, beta1=settings.beta1, beta2=settings.beta2,
        weight_decay=settings.weight_decay, predictor_lr=settings.predictor_lr,
    )
    res = model.forward_full(list(ref.features), train_mode=False)
    prev_w = res.breakdown.weight
    records = []
    n = train_batch.n
    for epoch in range(1, settings.epochs + 1):
        perm = rng.permutation(n)
        sums = {"total": 0.0, "fused": 0.0, "pred": 0.0}
        uni_sums = np.zeros(model.config.n_modalities)
        for start in range(0, n, settings.batch_size):
            idx = perm[start : start + settings.batch_size]
            feats, ys = _index_batch(train_batch, idx)
            report = model.train_step(feats, ys, optimizer, rng)
            w = len(idx) / n
            sums["total"] += report.total * w
            sums["fused"] += report.fused_ce * w
            sums["pred"] += report.predictor_loss * w
            uni_sums += np.array(report.unimodal_ce) * w
        res = model.forward_full(list(ref.features), train_mode=False)
        val_acc = float(np.mean(res.fused_logits.argmax(axis=1) == ref.labels))
        d_omega = float(np.mean(np.abs(res.breakdown.weight - prev_w)))
        prev_w = res.breakdown.weight
        records.append(
            EpochRecord(
                epoch=epoch, total=sums["total"], fused_ce=sums["fused"],
                unimodal_ce=tuple(uni_sums), predictor_loss=sums["pred"],
                val_accuracy=val_acc, delta_omega=d_omega,
            )
        )
    return records
