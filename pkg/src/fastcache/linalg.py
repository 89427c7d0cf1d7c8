"""Dense kernel layer: matmul, norms, row gather/scatter, seeded Gaussian init.

Matrices are plain 2-D numpy arrays, row-major, treated as immutable by
every caller in this package. Hidden states and trace payloads are float32;
all statistics derived from them are accumulated in float64 (see stats.py).

Determinism: within one environment the BLAS-backed product is bit-stable
for fixed inputs, which is what the equivalence tests quantify over.
seeded_gaussian is reproducible across platforms by construction: it maps
Philox4x64 counter output to (0,1) doubles and applies Box-Muller, so equal
(seed, stream) pairs give bit-identical matrices.
"""

from __future__ import annotations

import numpy as np

from .validation import as_matrix, check_finite, check_same_shape

__all__ = [
    "matmul",
    "add",
    "sub",
    "scale",
    "transpose",
    "frobenius_norm",
    "row_sq_norms",
    "gather_rows",
    "scatter_rows",
    "seeded_gaussian",
]

_MASK64 = (1 << 64) - 1


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions differ: {a.shape} x {b.shape}")
    out = a @ b
    check_finite(out, "matmul result")
    return out


def add(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    check_same_shape(a, b)
    return a + b


def sub(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    check_same_shape(a, b)
    return a - b


def scale(a, c) -> np.ndarray:
    a = as_matrix(a, "a")
    return a * float(c)


def transpose(a) -> np.ndarray:
    return as_matrix(a, "a").T


def frobenius_norm(a) -> float:
    """sqrt of the sum of squared entries, accumulated in float64."""
    a = np.asarray(a)
    return float(np.sqrt(np.sum(np.square(a, dtype=np.float64))))


def row_sq_norms(a) -> np.ndarray:
    """Per-row sum of squared entries (float64, length = rows)."""
    a = np.asarray(a)
    if a.ndim != 2:
        raise ValueError(f"expected 2-D array, got ndim={a.ndim}")
    return np.sum(np.square(a, dtype=np.float64), axis=1)


def gather_rows(a, indices) -> np.ndarray:
    a = as_matrix(a, "a")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise IndexError(f"row index out of range for {a.shape[0]} rows")
    return a[idx]


def scatter_rows(a, indices, rows) -> np.ndarray:
    """Copy of `a` with `rows` written at `indices`. Does not mutate `a`."""
    a = as_matrix(a, "a")
    rows = as_matrix(rows, "rows")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.shape[0] != rows.shape[0]:
        raise ValueError("indices and rows disagree in length")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise IndexError(f"row index out of range for {a.shape[0]} rows")
    out = a.copy()
    out[idx] = rows
    return out


def _philox_uniforms(n: int, seed: int, stream: int) -> tuple[np.ndarray, np.ndarray]:
    # Counter-based stream keyed by (seed, stream); 53-bit mantissa mapping
    # keeps every draw strictly inside (0, 1) so log() below is safe.
    key = ((int(seed) & _MASK64) << 64) | (int(stream) & _MASK64)
    raw = np.random.Philox(key=key).random_raw(2 * n).reshape(2, n)
    u1 = ((raw[0] >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    u2 = ((raw[1] >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return u1, u2


def seeded_gaussian(rows, cols, seed, stream=0, dtype=np.float64) -> np.ndarray:
    """Standard-normal matrix from the Philox counter stream via Box-Muller."""
    rows, cols = int(rows), int(cols)
    if rows < 0 or cols < 0:
        raise ValueError("rows and cols must be non-negative")
    n = rows * cols
    if n == 0:
        return np.zeros((rows, cols), dtype=dtype)
    pairs = (n + 1) // 2
    u1, u2 = _philox_uniforms(pairs, seed, stream)
    r = np.sqrt(-2.0 * np.log(u1))
    theta = (2.0 * np.pi) * u2
    z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
    return z.reshape(rows, cols).astype(dtype, copy=False)
