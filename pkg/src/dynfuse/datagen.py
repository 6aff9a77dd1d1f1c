"""Synthetic multimodal classification data and test-time corruption.

Samples are class prototypes plus isotropic noise, one feature block per
modality. Per-modality informativeness is controlled by a label-flip rate
(a flipped sample draws its features from a wrong class's prototype), so
test-time corruption stays an independent axis. All draws come from one
seeded generator, making generation a pure function of its spec.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .validation import as_label_vector, check_modality_features

BATCH_MAGIC = "DYNFUSE-BATCH 1"
NOISE_KINDS = ("none", "gaussian", "salt_pepper")

# Maps a salt-pepper degree onto a per-coordinate corruption probability;
# degree 10 corrupts half the coordinates of a hit modality.
SALT_PEPPER_SCALE = 20.0
SALT_PEPPER_MAX_PROB = 0.9


@dataclass(frozen=True)
class GeneratorSpec:
    """Declarative description of one synthetic dataset."""

    n_classes: int = 3
    n_modalities: int = 2
    feature_dims: tuple = (12, 12)
    signal_scales: tuple = (1.0, 1.0)
    noise_scales: tuple = (0.8, 0.8)
    flip_rates: tuple = (0.1, 0.1)
    train_size: int = 320
    val_size: int = 160
    test_size: int = 400
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if self.n_modalities < 2:
            raise ValueError("n_modalities must be >= 2")
        for name in ("feature_dims", "signal_scales", "noise_scales", "flip_rates"):
            vals = getattr(self, name)
            if len(vals) != self.n_modalities:
                raise ValueError(f"{name} needs one entry per modality")
            object.__setattr__(self, name, tuple(vals))
        if any(d < 1 for d in self.feature_dims):
            raise ValueError("feature_dims must be positive")
        if any(s <= 0 for s in self.signal_scales):
            raise ValueError("signal_scales must be positive")
        if any(s < 0 for s in self.noise_scales):
            raise ValueError("noise_scales must be nonnegative")
        if any(not 0.0 <= r < 0.5 for r in self.flip_rates):
            raise ValueError("flip_rates must lie in [0, 0.5)")
        if min(self.train_size, self.val_size, self.test_size) < 1:
            raise ValueError("split sizes must be positive")


@dataclass(frozen=True)
class NoiseSpec:
    """Test-time corruption: kind, degree, and which fraction of modalities."""

    kind: str = "none"
    degree: float = 0.0
    modality_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.degree < 0:
            raise ValueError("noise degree must be >= 0")
        if not 0.0 <= self.modality_fraction <= 1.0:
            raise ValueError("modality_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class MultimodalBatch:
    """Immutable per-modality feature matrices plus integer labels.

    feature_low/feature_high carry the train split's per-dimension min/max
    (in standardized units); salt-pepper corruption snaps coordinates to
    them.
    """

    features: tuple
    labels: np.ndarray
    feature_low: tuple | None = None
    feature_high: tuple | None = None
    provenance: str = ""

    def __post_init__(self):
        feats = check_modality_features(self.features, "features")
        labels = as_label_vector(self.labels, name="labels")
        if labels.shape[0] != feats[0].shape[0]:
            raise ValueError("labels and features disagree on sample count")
        for arr in feats:
            arr.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        for name in ("feature_low", "feature_high"):
            bounds = getattr(self, name)
            if bounds is not None:
                bounds = tuple(np.asarray(b, dtype=np.float64) for b in bounds)
                if len(bounds) != len(feats):
                    raise ValueError(f"{name} needs one vector per modality")
                for m, b in enumerate(bounds):
                    if b.shape != (feats[m].shape[1],):
                        raise ValueError(f"{name}[{m}] has shape {b.shape}")
                    b.setflags(write=False)
                object.__setattr__(self, name, bounds)

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def n_modalities(self) -> int:
        return len(self.features)

    @property
    def feature_dims(self) -> tuple:
        return tuple(f.shape[1] for f in self.features)


def generate(spec: GeneratorSpec):
    """Draw (train, val, test) batches deterministically from the spec.

    Prototypes are drawn once per (class, modality) from a unit normal
    scaled by the modality's signal scale. Features are standardized per
    dimension with the train split's statistics.
    """
    rng = np.random.default_rng(spec.seed)
    n_total = spec.train_size + spec.val_size + spec.test_size
    protos = [
        spec.signal_scales[m] * rng.normal(size=(spec.n_classes, spec.feature_dims[m]))
        for m in range(spec.n_modalities)
    ]
    labels = rng.integers(0, spec.n_classes, size=n_total)
    feats = []
    for m in range(spec.n_modalities):
        flip = rng.random(n_total) < spec.flip_rates[m]
        offsets = rng.integers(1, spec.n_classes, size=n_total)
        eff = np.where(flip, (labels + offsets) % spec.n_classes, labels)
        x = protos[m][eff] + spec.noise_scales[m] * rng.standard_normal(
            (n_total, spec.feature_dims[m])
        )
        feats.append(x)

    tr = slice(0, spec.train_size)
    lo = []
    hi = []
    for m in range(spec.n_modalities):
        mu = feats[m][tr].mean(axis=0)
        sd = np.maximum(feats[m][tr].std(axis=0), 1e-12)
        feats[m] = (feats[m] - mu) / sd
        lo.append(feats[m][tr].min(axis=0).copy())
        hi.append(feats[m][tr].max(axis=0).copy())

    def cut(sl, name):
        return MultimodalBatch(
            features=tuple(f[sl].copy() for f in feats),
            labels=labels[sl].copy(),
            feature_low=tuple(lo),
            feature_high=tuple(hi),
            provenance=f"generate(seed={spec.seed}) {name}",
        )

    va = slice(spec.train_size, spec.train_size + spec.val_size)
    te = slice(spec.train_size + spec.val_size, n_total)
    return cut(tr, "train"), cut(va, "val"), cut(te, "test")


def corrupt(batch: MultimodalBatch, noise: NoiseSpec) -> MultimodalBatch:
    """Return a corrupted copy of the batch; the input is never mutated.

    Per sample, a seeded draw picks ceil(modality_fraction * M) modalities
    to hit (exactly one of two at the default fraction). Gaussian noise adds
    degree * standard-normal draws; features are standardized, so the degree
    is in train-sigma units. Salt-pepper sets each coordinate, with
    probability min(degree/20, 0.9), to the train split's per-dimension min
    or max with equal odds.
    """
    if noise.kind == "none" or noise.degree == 0.0:
        return replace(batch, provenance=batch.provenance + " +noise(none)")
    rng = np.random.default_rng(noise.seed)
    m = batch.n_modalities
    n_hit = math.ceil(noise.modality_fraction * m)
    order = rng.random((batch.n, m)).argsort(axis=1)
    hit = np.zeros((batch.n, m), dtype=bool)
    for col in range(n_hit):
        hit[np.arange(batch.n), order[:, col]] = True

    new_feats = []
    for mm in range(m):
        x = batch.features[mm].copy()
        sel = hit[:, mm]
        if noise.kind == "gaussian":
            draw = rng.standard_normal(x.shape)
            x[sel] += noise.degree * draw[sel]
        else:
            if batch.feature_low is None or batch.feature_high is None:
                raise ValueError("salt_pepper corruption needs train-split feature bounds")
            p = min(noise.degree / SALT_PEPPER_SCALE, SALT_PEPPER_MAX_PROB)
            flips = rng.random(x.shape) < p
            high = rng.random(x.shape) < 0.5
            flips &= sel[:, None]
            vals = np.where(high, batch.feature_high[mm], batch.feature_low[mm])
            x[flips] = np.broadcast_to(vals, x.shape)[flips]
        new_feats.append(x)
    return replace(
        batch,
        features=tuple(new_feats),
        provenance=batch.provenance + f" +noise({noise.kind},{noise.degree:g},seed={noise.seed})",
    )


def save_batch(batch: MultimodalBatch, path) -> None:
    """Write the batch: two text header lines, then little-endian raw arrays.

    Layout after the header: labels as int64, each modality's features as
    float64 row-major, then (if present) per-modality low and high bounds.
    """
    meta = {
        "n": batch.n,
        "n_modalities": batch.n_modalities,
        "feature_dims": list(batch.feature_dims),
        "has_bounds": batch.feature_low is not None,
        "provenance": batch.provenance,
    }
    with open(path, "wb") as fh:
        fh.write((BATCH_MAGIC + "\n").encode("ascii"))
        fh.write((json.dumps(meta, sort_keys=True) + "\n").encode("utf-8"))
        fh.write(batch.labels.astype("<i8").tobytes(order="C"))
        for x in batch.features:
            fh.write(x.astype("<f8").tobytes(order="C"))
        if batch.feature_low is not None:
            for b in batch.feature_low:
                fh.write(b.astype("<f8").tobytes(order="C"))
            for b in batch.feature_high:
                fh.write(b.astype("<f8").tobytes(order="C"))


def read_batch_header(path) -> dict:
    """Parse the two header lines only; the data payload is not touched."""
    with open(path, "rb") as fh:
        magic = fh.readline().decode("ascii", errors="replace").rstrip("\n")
        if magic != BATCH_MAGIC:
            raise ValueError(f"not a batch file or unsupported version: {magic!r}")
        try:
            meta = json.loads(fh.readline().decode("utf-8"))
        except json.JSONDecodeError as exc:
            raise ValueError(f"corrupt batch header: {exc}") from exc
    for key in ("n", "n_modalities", "feature_dims", "has_bounds"):
        if key not in meta:
            raise ValueError(f"batch header missing field {key!r}")
    return meta


def load_batch(path) -> MultimodalBatch:
    meta = read_batch_header(path)
    n = meta["n"]
    dims = meta["feature_dims"]
    with open(path, "rb") as fh:
        fh.readline()
        fh.readline()
        payload = fh.read()
    expected = 8 * n + 8 * n * sum(dims)
    if meta["has_bounds"]:
        expected += 2 * 8 * sum(dims)
    if len(payload) != expected:
        raise ValueError(
            f"batch payload is {len(payload)} bytes, expected {expected} (truncated or corrupt)"
        )
    off = 0

    def take(count, dtype):
        nonlocal off
        arr = np.frombuffer(payload, dtype=dtype, count=count, offset=off)
        off += count * 8
        return arr

    labels = take(n, "<i8").astype(np.int64)
    feats = tuple(take(n * d, "<f8").reshape(n, d).astype(np.float64) for d in dims)
    lo = hi = None
    if meta["has_bounds"]:
        lo = tuple(take(d, "<f8").astype(np.float64) for d in dims)
        hi = tuple(take(d, "<f8").astype(np.float64) for d in dims)
    return MultimodalBatch(
        features=feats, labels=labels, feature_low=lo, feature_high=hi,
        provenance=meta.get("provenance", ""),
    )
