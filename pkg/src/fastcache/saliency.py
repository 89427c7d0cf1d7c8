"""Spatial-temporal token reduction: saliency, partitioning, bypass, blending.

Per-token saliency is the squared L2 distance between a token's current and
previous-timestep rows. Tokens strictly above tau_s are "motion" and keep the
full compute path; the rest are "static" and may be refreshed by a cheap
affine bypass, optionally blended against the previous timestep's cached rows.
Reassembly restores original token positions (concatenation order would
scramble attention semantics).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .approx import LinearApproximator
from .linalg import row_sq_norms
from .validation import as_matrix

__all__ = [
    "SaliencyConfig",
    "TokenPartition",
    "compute_saliency",
    "partition_tokens",
    "static_bypass",
    "blend",
    "reassemble",
]


@dataclass(frozen=True)
class SaliencyConfig:
    tau_s: float = 0.05
    gamma: float = 0.5

    def __post_init__(self):
        if self.tau_s < 0:
            raise ValueError(f"tau_s must be non-negative, got {self.tau_s}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")


@dataclass(frozen=True)
class TokenPartition:
    """Sorted index sets for motion and static tokens over n_tokens rows."""

    motion_indices: np.ndarray
    static_indices: np.ndarray
    n_tokens: int

    def __post_init__(self):
        m = np.asarray(self.motion_indices, dtype=np.intp)
        s = np.asarray(self.static_indices, dtype=np.intp)
        object.__setattr__(self, "motion_indices", m)
        object.__setattr__(self, "static_indices", s)
        combined = np.concatenate([m, s])
        if m.size + s.size != self.n_tokens or (
            np.sort(combined) != np.arange(self.n_tokens)
        ).any():
            raise ValueError("motion and static indices must partition the token range")


def compute_saliency(current, previous) -> np.ndarray:
    """Per-token squared change ||x_t[i] - x_{t-1}[i]||^2, float64."""
    cur = np.asarray(current)
    prev = np.asarray(previous)
    if cur.shape != prev.shape:
        raise ValueError(f"shape mismatch: {cur.shape} vs {prev.shape}")
    return row_sq_norms(cur.astype(np.float64) - prev.astype(np.float64))


def partition_tokens(saliency, cfg: SaliencyConfig) -> TokenPartition:
    """Split tokens at tau_s; strictly-greater rows are motion."""
    sal = np.asarray(saliency, dtype=np.float64).reshape(-1)
    motion = np.flatnonzero(sal > cfg.tau_s)
    static = np.flatnonzero(sal <= cfg.tau_s)
    return TokenPartition(motion, static, sal.size)


def static_bypass(static_rows, approx: LinearApproximator) -> np.ndarray:
    """Affine refresh of static-token rows."""
    rows = as_matrix(static_rows, "static_rows")
    if approx.in_dim != rows.shape[1] or approx.out_dim != rows.shape[1]:
        raise ValueError(
            f"approximator dims ({approx.in_dim}->{approx.out_dim}) do not "
            f"match token dim {rows.shape[1]}"
        )
    return approx.apply(rows)


def blend(computed, cached, gamma) -> np.ndarray:
    """Convex combination gamma*computed + (1-gamma)*cached, elementwise."""
    a = np.asarray(computed)
    b = np.asarray(cached)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    g = float(gamma)
    if not 0.0 <= g <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    out = g * a + (1.0 - g) * b
    return out.astype(a.dtype, copy=False)


def reassemble(partition: TokenPartition, motion_rows, static_rows) -> np.ndarray:
    """Full matrix with every row restored to its original token position."""
    m = np.asarray(motion_rows)
    s = np.asarray(static_rows)
    if m.shape[0] != partition.motion_indices.size:
        raise ValueError("motion row count does not match partition")
    if s.shape[0] != partition.static_indices.size:
        raise ValueError("static row count does not match partition")
    dim = m.shape[1] if m.size else s.shape[1]
    out = np.empty((partition.n_tokens, dim), dtype=(m if m.size else s).dtype)
    out[partition.motion_indices] = m
    out[partition.static_indices] = s
    return out
