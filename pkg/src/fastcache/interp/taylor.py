"""Empirical checks of the approximation-error bounds.

taylor_residual_check measures |v(B + s*M) - order-n expansion| over a
geometric ladder of scales and fits the log-log slope, which should sit
near n+1 for analytic probes. first_order_gap_slope measures how fast the
sum of singleton interactions converges to the directional derivative.
drift_bound_check Monte-Carlo samples drifted background/motion pairs and
verifies the Lipschitz drift bound with zero tolerance.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from ..linalg import seeded_gaussian
from .interactions import ProbeFunction, singleton_attributions

__all__ = [
    "TaylorOrderResult",
    "TaylorReport",
    "taylor_residual_check",
    "first_order_gap_slope",
    "GaussianMeanShiftDrift",
    "DriftReport",
    "drift_bound_check",
]

_FLOOR = 1e-300


def _loglog_slope(scales, residuals) -> float:
    xs = np.log(np.asarray(scales, dtype=np.float64))
    ys = np.log(np.maximum(np.asarray(residuals, dtype=np.float64), _FLOOR))
    return float(np.polyfit(xs, ys, 1)[0])


@dataclass
class TaylorOrderResult:
    order: int
    scales: np.ndarray
    residuals: np.ndarray
    slope: float


@dataclass
class TaylorReport:
    results: list

    def slope(self, order: int) -> float:
        for r in self.results:
            if r.order == order:
                return r.slope
        raise KeyError(f"no result for order {order}")

    def to_json(self) -> str:
        return json.dumps([
            {
                "order": r.order,
                "scales": r.scales.tolist(),
                "residuals": r.residuals.tolist(),
                "slope": r.slope,
            }
            for r in self.results
        ])


def geometric_scales(start=0.1, ratio=0.5, count=8) -> np.ndarray:
    return start * ratio ** np.arange(count, dtype=np.float64)


def taylor_residual_check(probe, base, direction, orders=(1, 2, 3),
                          scales=None) -> TaylorReport:
    """Residuals of the order-n expansion along ``direction`` and their slopes.

    The probe supplies exact directional derivatives, so the residual is
    purely the truncation term.
    """
    base = np.asarray(base, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    if scales is None:
        scales = geometric_scales()
    scales = np.asarray(scales, dtype=np.float64)

    max_order = max(int(n) for n in orders)
    derivs = [probe.directional_derivative(base, direction, j) for j in range(max_order + 1)]
    results = []
    for n in orders:
        n = int(n)
        residuals = np.empty_like(scales)
        for i, s in enumerate(scales):
            expansion = sum(derivs[j] * s**j / math.factorial(j) for j in range(n + 1))
            residuals[i] = abs(probe.value(base + s * direction) - expansion)
        results.append(TaylorOrderResult(n, scales, residuals, _loglog_slope(scales, residuals)))
    return TaylorReport(results)


def first_order_gap_slope(probe, base, direction, scales=None):
    """Slope of |sum_i I({i}) - grad v . (s*M)| vs s; second order for smooth v."""
    base = np.asarray(base, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    if scales is None:
        scales = geometric_scales(0.1, 0.5, 6)
    scales = np.asarray(scales, dtype=np.float64)
    d1 = probe.directional_derivative(base, direction, 1)
    gaps = np.empty_like(scales)
    for i, s in enumerate(scales):
        pf = ProbeFunction(probe.value, base)
        phi = singleton_attributions(pf, base + s * direction)
        gaps[i] = abs(float(phi.sum()) - s * d1)
    return _loglog_slope(scales, gaps), scales, gaps


def _bounded_direction(rows, cols, seed, stream, radius, rng_fraction):
    """Matrix with Frobenius norm exactly radius*rng_fraction (0 if radius 0)."""
    if radius == 0.0:
        return np.zeros((rows, cols)), 0.0
    raw = seeded_gaussian(rows, cols, seed, stream=stream)
    norm = float(np.linalg.norm(raw))
    target = radius * rng_fraction
    if norm == 0.0:
        return np.zeros((rows, cols)), 0.0
    return raw * (target / norm), target


@dataclass(frozen=True)
class GaussianMeanShiftDrift:
    """Sampler for drifted (X, B_tilde) pairs with declared norm budgets.

    Backgrounds are standard Gaussian; motion, model error, and the drift
    mean-shift are random directions with Frobenius norms bounded by delta,
    model_eps, and drift_gamma. tv_upper_bound() is the analytic total
    variation bound between the clean and mean-shifted Gaussians.
    """

    n_tokens: int
    dim: int
    delta: float = 0.1
    model_eps: float = 0.05
    drift_gamma: float = 0.05
    seed: int = 0

    def sample(self, i: int):
        n, d = self.n_tokens, self.dim
        base_stream = 10 * i
        background = seeded_gaussian(n, d, self.seed, stream=base_stream)
        u = seeded_gaussian(1, 3, self.seed, stream=base_stream + 1)
        fracs = ndtr(u.ravel())  # deterministic (0,1) radii fractions
        motion, d_meas = _bounded_direction(n, d, self.seed, base_stream + 2, self.delta, fracs[0])
        err, e_meas = _bounded_direction(n, d, self.seed, base_stream + 3, self.model_eps, fracs[1])
        shift, _ = _bounded_direction(n, d, self.seed, base_stream + 4, self.drift_gamma, fracs[2])
        x = background + motion
        b_tilde = background + err + shift
        return x, b_tilde, d_meas, e_meas

    def tv_upper_bound(self) -> float:
        # mean-shift Gaussians: TV = 2*Phi(||shift||/2) - 1 at the budget cap
        return float(2.0 * ndtr(self.drift_gamma / 2.0) - 1.0)


@dataclass
class DriftReport:
    n_samples: int
    violations: int
    min_slack: float
    max_slack: float
    lipschitz: float
    drift_gamma: float
    tv_upper_bound: float
    details: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({
            "n_samples": self.n_samples,
            "violations": self.violations,
            "min_slack": self.min_slack,
            "max_slack": self.max_slack,
            "lipschitz": self.lipschitz,
            "drift_gamma": self.drift_gamma,
            "tv_upper_bound": self.tv_upper_bound,
            **self.details,
        })


def drift_bound_check(probe, generator: GaussianMeanShiftDrift,
                      n_samples=1000) -> DriftReport:
    """Verify |v(X) - v(B_tilde)| <= L*(delta + model_eps + drift_gamma) per sample.

    delta and model_eps are the measured per-sample norms; drift_gamma is the
    generator's declared bound on its mean shift.
    """
    lip = float(probe.lipschitz)
    violations = 0
    min_slack = math.inf
    max_slack = -math.inf
    for i in range(n_samples):
        x, b_tilde, d_meas, e_meas = generator.sample(i)
        left = abs(probe.value(x) - probe.value(b_tilde))
        right = lip * (d_meas + e_meas + generator.drift_gamma)
        slack = right - left
        if slack < 0:
            violations += 1
        min_slack = min(min_slack, slack)
        max_slack = max(max_slack, slack)
    return DriftReport(
        n_samples=n_samples,
        violations=violations,
        min_slack=min_slack,
        max_slack=max_slack,
        lipschitz=lip,
        drift_gamma=generator.drift_gamma,
        tv_upper_bound=generator.tv_upper_bound(),
    )
