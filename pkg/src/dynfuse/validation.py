"""Input validation helpers shared by the library and the estimator facade."""

from __future__ import annotations

import numpy as np


def as_float_matrix(x, name: str = "x") -> np.ndarray:
    """Coerce to a finite 2-D float64 array or raise ValueError."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def as_float_vector(x, name: str = "x") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def as_label_vector(y, n_classes: int | None = None, name: str = "y") -> np.ndarray:
    """Coerce to a 1-D int64 label vector, optionally checking the class range."""
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.all(arr == np.floor(arr)):
            raise ValueError(f"{name} must hold integer class indices")
    arr = arr.astype(np.int64)
    if arr.size and arr.min() < 0:
        raise ValueError(f"{name} contains negative class indices")
    if n_classes is not None and arr.size and arr.max() >= n_classes:
        raise ValueError(
            f"{name} contains label {int(arr.max())} outside range [0, {n_classes})"
        )
    return arr


def check_modality_features(xs, name: str = "features") -> tuple[np.ndarray, ...]:
    """Validate a per-modality list of feature matrices with a shared sample count."""
    if isinstance(xs, np.ndarray) and xs.ndim == 2:
        xs = [xs]
    mats = tuple(as_float_matrix(x, f"{name}[{m}]") for m, x in enumerate(xs))
    if len(mats) == 0:
        raise ValueError(f"{name} must contain at least one modality")
    n = mats[0].shape[0]
    for m, mat in enumerate(mats):
        if mat.shape[0] != n:
            raise ValueError(
                f"{name}[{m}] has {mat.shape[0]} rows, expected {n} shared across modalities"
            )
    return mats


def check_same_shape(a: np.ndarray, b: np.ndarray, name_a: str = "a", name_b: str = "b") -> None:
    if a.shape != b.shape:
        raise ValueError(f"{name_a} shape {a.shape} != {name_b} shape {b.shape}")
