"""Self-checking invariant suites: statistics, gate soundness, interpretability.

Each suite returns InvariantResult rows with a signed margin (>= 0 passes,
magnitude = slack against the tolerance), so the report doubles as a
regression log of how much headroom every guarantee has. The optional
fault injection perturbs the gate threshold inside the checks; a healthy
checker must then fail, which is the checker's own self-test.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .engine import EngineConfig, run_full, run_generation
from .linalg import seeded_gaussian
from .model import Schedule, ToyModel, make_schedule
from .stats import ChiSquareTest, chi2_cdf, chi2_quantile
from .interp import (
    ExpLinearProbe,
    GaussianMeanShiftDrift,
    LinearProbe,
    MeanProbe,
    PolynomialProbe,
    ProbeFunction,
    drift_bound_check,
    first_order_gap_slope,
    harsanyi,
    taylor_residual_check,
)

__all__ = [
    "InvariantResult",
    "SUITE_NAMES",
    "run_stats_suite",
    "run_bounds_suite",
    "run_interp_suite",
    "run_suites",
    "report_json",
]

SUITE_NAMES = ("stats", "bounds", "interp")
FAULTS = ("threshold",)

QUANTILE_DOFS = (1, 2, 10, 128, 1024)
QUANTILE_PS = (0.9, 0.95, 0.99)
ALPHA_GRID = (0.01, 0.05, 0.1, 0.2)
SCHEDULE_KINDS = ("static", "low_motion", "high_motion", "decaying")

# dof-2 closed form: chi-square(2) is Exp(1/2), quantile(p) = -2*log(1-p)
_CHI2_2_95 = -2.0 * math.log(0.05)


@dataclass
class InvariantResult:
    suite: str
    name: str
    passed: bool
    margin: float
    detail: str = ""

    def as_dict(self) -> dict:
        return {
            "suite": self.suite,
            "name": self.name,
            "passed": self.passed,
            "margin": self.margin,
            "detail": self.detail,
        }


def _result(suite, name, margin, detail="") -> InvariantResult:
    margin = float(margin)
    return InvariantResult(suite, name, margin >= 0.0, margin, detail)


def _check_fault(fault):
    if fault is not None and fault not in FAULTS:
        raise ValueError(f"unknown fault {fault!r}; supported: {FAULTS}")


def run_stats_suite(fault=None) -> list:
    """Quantile accuracy and threshold-shape invariants."""
    _check_fault(fault)
    perturb = 1.05 if fault == "threshold" else 1.0
    results = []

    worst = 0.0
    for dof in QUANTILE_DOFS:
        for p in QUANTILE_PS:
            err = abs(chi2_cdf(dof, perturb * chi2_quantile(dof, p)) - p)
            worst = max(worst, err)
    results.append(_result(
        "stats", "quantile_roundtrip", 1e-8 - worst,
        f"max |cdf(quantile(p)) - p| = {worst:.3e} over {len(QUANTILE_DOFS)}x{len(QUANTILE_PS)} grid",
    ))

    err = abs(perturb * chi2_quantile(2, 0.95) - _CHI2_2_95)
    results.append(_result(
        "stats", "quantile_closed_form", 1e-9 - err,
        f"|quantile(2, 0.95) - (-2 ln 0.05)| = {err:.3e}",
    ))

    ps = (0.5, 0.75, 0.9, 0.95, 0.99, 0.999)
    qs = [chi2_quantile(10, p) for p in ps]
    gap = min(b - a for a, b in zip(qs, qs[1:]))
    results.append(_result(
        "stats", "quantile_monotone_in_p", gap,
        f"min quantile increment {gap:.6f} over p grid at dof 10",
    ))

    ths = [ChiSquareTest(dof=512, significance=a).threshold for a in ALPHA_GRID]
    gap = min(a - b for a, b in zip(ths, ths[1:]))
    results.append(_result(
        "stats", "threshold_decreasing_in_alpha", gap,
        f"thresholds {['%.4f' % t for t in ths]} at alpha {list(ALPHA_GRID)}",
    ))
    return results


def _soundness(decisions, inflate=1.0):
    """(violations, min slack, skip count) for skipped-decision error bounds."""
    violations = 0
    slack = math.inf
    skips = 0
    for d in decisions:
        if d.delta is None:
            continue
        skipped = d.skipped if inflate == 1.0 else d.delta * d.delta <= d.threshold * inflate
        if skipped:
            skips += 1
            slack = min(slack, d.bound - d.delta)
            if d.delta > d.bound:
                violations += 1
    return violations, slack, skips


def run_bounds_suite(fault=None) -> list:
    """Gate soundness over all schedules x significance levels, plus the
    forced-compute and off-switch guarantees."""
    _check_fault(fault)
    inflate = 4.0 if fault == "threshold" else 1.0
    model = ToyModel.build(layers=4, dim=32, heads=4, seed=7)
    results = []

    total_violations = 0
    total_skips = 0
    min_slack = math.inf
    first_step_ok = True
    for kind in SCHEDULE_KINDS:
        inputs = make_schedule(Schedule(kind, 12, 16, 32), seed=11)
        for alpha in ALPHA_GRID:
            cfg = EngineConfig(significance=alpha)
            report = run_generation(model, inputs, cfg)
            v, s, k = _soundness(report.decisions, inflate)
            total_violations += v
            total_skips += k
            min_slack = min(min_slack, s)
            first_step_ok &= all(
                d.forced and not d.skipped
                for d in report.decisions if d.timestep == 0
            )
    bound_cap = ChiSquareTest(dof=16 * 32, significance=min(ALPHA_GRID)).threshold ** 0.5
    slack = min(min_slack, bound_cap)
    results.append(_result(
        "bounds", "gate_soundness",
        -float(total_violations) if total_violations else slack,
        f"{total_violations} violations over {total_skips} skips "
        f"({len(SCHEDULE_KINDS)} schedules x {len(ALPHA_GRID)} alphas); min slack {slack:.4f}",
    ))
    results.append(_result(
        "bounds", "first_step_forced", 1.0 if first_step_ok else -1.0,
        "every layer computes at the first timestep",
    ))

    zeros = [np.zeros((16, 32), dtype=np.float32) for _ in range(3)]
    zrep = run_generation(model, zeros, EngineConfig(token_reduction_enabled=False))
    degen_ok = all(d.forced and not d.skipped and d.delta is None
                   for d in zrep.decisions)
    results.append(_result(
        "bounds", "zero_reference_forced", 1.0 if degen_ok else -1.0,
        "zero-norm reference forces compute and flags the decision",
    ))

    inputs = make_schedule(Schedule("decaying", 8, 16, 32), seed=3)
    off = EngineConfig(token_reduction_enabled=False, block_cache_enabled=False,
                       blend_enabled=False)
    off_rep = run_generation(model, inputs, off, method="off")
    full_rep = run_full(model, inputs)
    bitwise = all(
        np.array_equal(a, b) for a, b in zip(off_rep.outputs, full_rep.outputs)
    )
    results.append(_result(
        "bounds", "off_switch_bitwise", 1.0 if bitwise else -1.0,
        "all modules disabled reproduces the plain forward pass bit-exactly",
    ))
    return results


def run_interp_suite(fault=None) -> list:
    """Interaction exactness, expansion-order slopes, and the drift bound."""
    _check_fault(fault)
    results = []

    worst_eff = 0.0
    worst_round = 0.0
    for n in (2, 4, 8):
        poly = PolynomialProbe.random(n, 6, seed=n)
        baseline = seeded_gaussian(n, 6, 100 + n)
        x = baseline + seeded_gaussian(n, 6, 200 + n)
        rep = harsanyi(ProbeFunction(poly.value, baseline), x)
        worst_eff = max(worst_eff, rep.efficiency_residual)
        for mask in range(1 << n):
            err = abs(rep.reconstruct_value(mask) - float(rep.subset_values[mask]))
            worst_round = max(worst_round, err)
    results.append(_result(
        "interp", "harsanyi_efficiency", 1e-9 - worst_eff,
        f"max efficiency residual {worst_eff:.3e} at N in (2, 4, 8)",
    ))
    results.append(_result(
        "interp", "mobius_roundtrip", 1e-9 - worst_round,
        f"max subset reconstruction error {worst_round:.3e}",
    ))

    n, d = 4, 6
    m = seeded_gaussian(n, d, 5, stream=2)
    a_raw = seeded_gaussian(n, d, 5, stream=1)
    a = a_raw * (2.0 / float(np.sum(a_raw * m)))
    b_raw = seeded_gaussian(n, d, 5, stream=3)
    b = b_raw - a * (float(np.sum(a * b_raw)) / float(np.sum(a * a)))
    exp_probe = ExpLinearProbe(a)
    taylor = taylor_residual_check(exp_probe, b, m, orders=(1, 2, 3))
    worst_slope = max(abs(taylor.slope(k) - (k + 1)) for k in (1, 2, 3))
    results.append(_result(
        "interp", "taylor_slopes", 0.2 - worst_slope,
        "log-log residual slopes "
        + ", ".join(f"n={k}: {taylor.slope(k):.3f}" for k in (1, 2, 3)),
    ))

    poly = PolynomialProbe.random(n, d, seed=17, n_terms=3, max_power=3)
    exact = taylor_residual_check(poly, b, m, orders=(poly.degree, poly.degree + 1))
    worst_resid = max(float(r.residuals.max()) for r in exact.results)
    results.append(_result(
        "interp", "polynomial_exactness", 1e-12 - worst_resid,
        f"degree-{poly.degree} probe, max residual {worst_resid:.3e} at order >= degree",
    ))

    slope, _, _ = first_order_gap_slope(exp_probe, b, m)
    results.append(_result(
        "interp", "first_order_gap", slope - 1.8,
        f"singleton sum vs directional derivative gap slope {slope:.3f}",
    ))

    worst_viol = 0
    drift_slack = math.inf
    settings = (
        {"delta": 0.1, "model_eps": 0.05, "drift_gamma": 0.05},
        {"delta": 0.1, "model_eps": 0.0, "drift_gamma": 0.0},
    )
    for idx, kw in enumerate(settings):
        gen = GaussianMeanShiftDrift(8, 16, seed=idx, **kw)
        for probe in (LinearProbe(seeded_gaussian(8, 16, 50 + idx)), MeanProbe(8, 16)):
            rep = drift_bound_check(probe, gen, n_samples=300)
            worst_viol += rep.violations
            drift_slack = min(drift_slack, rep.min_slack)
    results.append(_result(
        "interp", "drift_bound",
        -float(worst_viol) if worst_viol else drift_slack,
        f"{worst_viol} violations over {len(settings)}x2 probe settings; min slack {drift_slack:.3e}",
    ))
    return results


_SUITES = {
    "stats": run_stats_suite,
    "bounds": run_bounds_suite,
    "interp": run_interp_suite,
}


def run_suites(which="all", fault=None) -> list:
    if which == "all":
        names = SUITE_NAMES
    elif which in _SUITES:
        names = (which,)
    else:
        raise ValueError(f"unknown suite {which!r}; choose from {SUITE_NAMES + ('all',)}")
    results = []
    for name in names:
        results.extend(_SUITES[name](fault=fault))
    return results


def report_json(results) -> str:
    return json.dumps({
        "passed": all(r.passed for r in results),
        "invariants": [r.as_dict() for r in results],
    }, indent=2, sort_keys=True)
