"""Chi-squared machinery and the relative-change statistic gating every skip.

The decision rule: a block may be skipped at timestep t iff

    delta^2 <= chi2_quantile(N*D, 1 - alpha) / (N*D)

where delta is the relative Frobenius change of the block input against the
previous timestep. The rule is implemented literally; see the calibration
test for how the chi-squared reference distribution is exercised.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammainc, ndtri

from .linalg import frobenius_norm
from .validation import check_positive_int, check_probability

__all__ = [
    "DegenerateReferenceError",
    "ChiSquareTest",
    "chi2_cdf",
    "chi2_quantile",
    "relative_change",
    "should_skip",
    "cache_error_bound",
]


class DegenerateReferenceError(ValueError):
    """Previous state has zero norm; the caller must force a compute path."""


def chi2_cdf(dof, x) -> float:
    """P(chi2_dof <= x), the regularized lower incomplete gamma P(dof/2, x/2)."""
    dof = check_positive_int(dof, "dof")
    x = float(x)
    if x < 0:
        raise ValueError(f"x must be non-negative, got {x}")
    return float(gammainc(dof / 2.0, x / 2.0))


def _wilson_hilferty(dof: int, p: float) -> float:
    # Cube-of-normal approximation; good to a few percent, used only to seed
    # the bracket for root-finding.
    z = float(ndtri(p))
    c = 2.0 / (9.0 * dof)
    return dof * (1.0 - c + z * np.sqrt(c)) ** 3


@lru_cache(maxsize=4096)
def chi2_quantile(dof, p) -> float:
    """x with chi2_cdf(dof, x) = p, solved to well below 1e-9."""
    dof = check_positive_int(dof, "dof")
    p = check_probability(p, "p")
    guess = max(_wilson_hilferty(dof, p), np.finfo(float).tiny)
    lo, hi = guess, guess
    while chi2_cdf(dof, lo) > p and lo > 1e-300:
        lo /= 2.0
    while chi2_cdf(dof, hi) < p:
        hi = hi * 2.0 + 1.0
    if lo == hi:
        return float(lo)
    rtol = 4.0 * float(np.finfo(float).eps)  # brentq's tightest allowed
    return float(brentq(lambda x: chi2_cdf(dof, x) - p, lo, hi, xtol=1e-13, rtol=rtol))


@dataclass(frozen=True)
class ChiSquareTest:
    """Immutable gate for one (dof, significance) pair; threshold memoized."""

    dof: int
    significance: float
    threshold: float = field(init=False)

    def __post_init__(self):
        dof = check_positive_int(self.dof, "dof")
        sig = check_probability(self.significance, "significance")
        object.__setattr__(self, "dof", dof)
        object.__setattr__(self, "significance", sig)
        object.__setattr__(self, "threshold", chi2_quantile(dof, 1.0 - sig) / dof)


def relative_change(current, previous) -> float:
    """||current - previous||_F / ||previous||_F, accumulated in float64."""
    cur = np.asarray(current)
    prev = np.asarray(previous)
    if cur.shape != prev.shape:
        raise ValueError(f"shape mismatch: {cur.shape} vs {prev.shape}")
    ref = frobenius_norm(prev)
    if ref == 0.0:
        raise DegenerateReferenceError("previous state has zero Frobenius norm")
    diff = cur.astype(np.float64) - prev.astype(np.float64)
    return frobenius_norm(diff) / ref


def should_skip(test: ChiSquareTest, delta) -> bool:
    """True iff delta^2 <= threshold. Boundary inclusive."""
    delta = float(delta)
    return delta * delta <= test.threshold


def cache_error_bound(test: ChiSquareTest) -> float:
    """Worst-case relative error accepted by the gate: sqrt(threshold)."""
    return float(np.sqrt(test.threshold))
