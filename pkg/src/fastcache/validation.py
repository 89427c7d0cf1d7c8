"""Input validation helpers shared across the public API."""

from __future__ import annotations

import numpy as np

__all__ = [
    "as_matrix",
    "check_finite",
    "check_same_shape",
    "check_probability",
    "check_positive_int",
]


def as_matrix(a, name="a", dtype=None, allow_empty=True) -> np.ndarray:
    """Coerce to a 2-D float ndarray and reject non-finite entries."""
    arr = np.asarray(a, dtype=dtype)
    if arr.dtype.kind != "f":
        arr = arr.astype(np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got ndim={arr.ndim}")
    if not allow_empty and arr.size == 0:
        raise ValueError(f"{name} must be non-empty")
    check_finite(arr, name)
    return arr


def check_finite(a: np.ndarray, name="array") -> None:
    if a.size and not np.isfinite(a).all():
        raise ValueError(f"{name} contains NaN or Inf")


def check_same_shape(a: np.ndarray, b: np.ndarray, names=("a", "b")) -> None:
    if a.shape != b.shape:
        raise ValueError(
            f"{names[0]} and {names[1]} must have equal shapes, "
            f"got {a.shape} and {b.shape}"
        )


def check_probability(p: float, name="p", open_interval=True) -> float:
    p = float(p)
    if open_interval:
        ok = 0.0 < p < 1.0
    else:
        ok = 0.0 <= p <= 1.0
    if not ok:
        raise ValueError(f"{name} must lie in the {'open ' if open_interval else ''}unit interval, got {p}")
    return p


def check_positive_int(n, name="n") -> int:
    m = int(n)
    if m != n or m <= 0:
        raise ValueError(f"{name} must be a positive integer, got {n!r}")
    return m
