"""Exact Harsanyi interactions over token subsets by Mobius inversion.

Masking a subset S means taking x's rows on S and the baseline's rows
elsewhere; v is evaluated on every subset (N capped at 12) and the
interaction values come from the in-place subset Mobius transform of
v(x_S) - v(x_empty). The singleton values I({i}) are the attribution
scores whose temporal stability gates interpretability caching.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..validation import as_matrix

__all__ = [
    "BRUTE_FORCE_CAP",
    "ProbeFunction",
    "InteractionReport",
    "harsanyi",
    "singleton_attributions",
    "cache_trigger",
    "write_attribution_csv",
]

BRUTE_FORCE_CAP = 12


@dataclass(frozen=True)
class ProbeFunction:
    """Scalar scoring function with the masking baseline it is scored against."""

    evaluator: Callable
    baseline: np.ndarray
    lipschitz: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "baseline", as_matrix(self.baseline, "baseline", dtype=np.float64))

    @property
    def n_tokens(self) -> int:
        return self.baseline.shape[0]

    def __call__(self, x) -> float:
        return float(self.evaluator(x))

    def masked(self, x, mask: int) -> np.ndarray:
        """Rows of x where the mask bit is set, baseline rows elsewhere."""
        out = self.baseline.copy()
        rows = [i for i in range(self.n_tokens) if mask >> i & 1]
        if rows:
            out[rows] = np.asarray(x, dtype=np.float64)[rows]
        return out


@dataclass
class InteractionReport:
    """All 2^N interactions plus the summaries the theory checks read."""

    n_tokens: int
    interactions: np.ndarray       # indexed by subset bitmask
    subset_values: np.ndarray      # v(x_S), same indexing
    phi: np.ndarray                # singleton values I({i})
    efficiency_residual: float
    order_sums: np.ndarray         # sum of I(S) per |S|

    def interaction(self, subset) -> float:
        mask = 0
        for i in subset:
            mask |= 1 << int(i)
        return float(self.interactions[mask])

    def reconstruct_value(self, mask: int) -> float:
        """v(x_S) rebuilt as v(empty) + sum over T subseteq S of I(T)."""
        total = float(self.subset_values[0])
        sub = mask
        while True:
            total += float(self.interactions[sub])
            if sub == 0:
                break
            sub = (sub - 1) & mask
        return total

    def to_json(self) -> str:
        return json.dumps({
            "n_tokens": self.n_tokens,
            "phi": self.phi.tolist(),
            "efficiency_residual": self.efficiency_residual,
            "order_sums": self.order_sums.tolist(),
            "interactions": self.interactions.tolist(),
        })


def harsanyi(probe: ProbeFunction, x) -> InteractionReport:
    """Exact interactions for every subset; requires n_tokens <= 12."""
    n = probe.n_tokens
    if n > BRUTE_FORCE_CAP:
        raise ValueError(
            f"harsanyi is brute force over 2^N subsets; N={n} exceeds cap {BRUTE_FORCE_CAP}. "
            "Use singleton_attributions for larger N."
        )
    x = as_matrix(x, "x", dtype=np.float64)
    if x.shape != probe.baseline.shape:
        raise ValueError(f"x shape {x.shape} != baseline {probe.baseline.shape}")

    size = 1 << n
    values = np.empty(size, dtype=np.float64)
    for mask in range(size):
        values[mask] = probe(probe.masked(x, mask))

    inter = values - values[0]
    for i in range(n):
        bit = 1 << i
        for mask in range(size):
            if mask & bit:
                inter[mask] -= inter[mask ^ bit]

    phi = np.array([inter[1 << i] for i in range(n)])
    # zeta transform at the full set telescopes to v(x) - v(baseline)
    residual = abs(float(inter.sum()) - (float(values[-1]) - float(values[0])))
    orders = np.zeros(n + 1)
    for mask in range(size):
        orders[bin(mask).count("1")] += inter[mask]
    return InteractionReport(n, inter, values, phi, residual, orders)


def singleton_attributions(probe: ProbeFunction, x) -> np.ndarray:
    """I({i}) = v(x_{i}) - v(baseline) for each token; any N."""
    x = as_matrix(x, "x", dtype=np.float64)
    base_val = probe(probe.baseline)
    out = np.empty(probe.n_tokens)
    for i in range(probe.n_tokens):
        masked = probe.baseline.copy()
        masked[i] = x[i]
        out[i] = probe(masked) - base_val
    return out


def cache_trigger(phi_t, phi_prev, tau_c) -> np.ndarray:
    """Per-token reuse flags: |phi_t - phi_prev| strictly below tau_c."""
    a = np.asarray(phi_t, dtype=np.float64).reshape(-1)
    b = np.asarray(phi_prev, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ValueError("attribution vectors differ in length")
    return np.abs(a - b) < float(tau_c)


def write_attribution_csv(destination, phi_by_timestep) -> None:
    """Heatmap-ready CSV: one row per (timestep, token) with |phi|."""
    close = False
    if hasattr(destination, "write"):
        fh = destination
    else:
        fh = open(destination, "w", newline="")
        close = True
    try:
        w = csv.writer(fh)
        w.writerow(["timestep", "token", "abs_phi"])
        for t, phi in enumerate(phi_by_timestep):
            for i, val in enumerate(np.asarray(phi).reshape(-1)):
                w.writerow([t, i, repr(abs(float(val)))])
    finally:
        if close:
            fh.close()
