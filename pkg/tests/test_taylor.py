import json
import math

import numpy as np
import pytest
from scipy.stats import norm

from fastcache.interp.probes import (
    ExpLinearProbe,
    LinearProbe,
    MeanProbe,
    PolynomialProbe,
    finite_difference_directional,
)
from fastcache.interp.taylor import (
    DriftReport,
    GaussianMeanShiftDrift,
    TaylorReport,
    drift_bound_check,
    first_order_gap_slope,
    geometric_scales,
    taylor_residual_check,
)
from fastcache.linalg import seeded_gaussian


def exp_setup(n=4, dim=6, seed=3):
    """Exp probe with <A, direction> = 2 and <A, base> = 0, so v(base) = 1."""
    a = seeded_gaussian(n, dim, seed)
    direction = seeded_gaussian(n, dim, seed + 50)
    a = a * (2.0 / float((a * direction).sum()))
    raw = seeded_gaussian(n, dim, seed + 100)
    base = raw - a * (float((a * raw).sum()) / float((a * a).sum()))
    return ExpLinearProbe(a), base, direction


def test_geometric_scales_values():
    np.testing.assert_allclose(geometric_scales(), 0.1 * 0.5 ** np.arange(8), rtol=0)
    assert geometric_scales(1.0, 0.1, 3).tolist() == [1.0, 0.1, 0.01]


def test_residuals_match_analytic_truncation():
    probe, base, direction = exp_setup()
    report = taylor_residual_check(probe, base, direction)
    g = 2.0
    for result in report.results:
        want = [
            abs(math.exp(g * s) - sum((g * s) ** j / math.factorial(j)
                                      for j in range(result.order + 1)))
            for s in result.scales
        ]
        # the smallest residuals come from cancellation near 1e-15 absolute
        np.testing.assert_allclose(result.residuals, want, rtol=1e-5, atol=1e-13)


def test_slopes_track_truncation_order():
    probe, base, direction = exp_setup()
    report = taylor_residual_check(probe, base, direction, orders=(1, 2, 3))
    for order in (1, 2, 3):
        assert report.slope(order) == pytest.approx(order + 1, abs=0.2)
    with pytest.raises(KeyError):
        report.slope(5)


def test_polynomial_expansion_is_exact_at_its_degree():
    probe = PolynomialProbe.random(4, 6, seed=17, n_terms=3, max_power=3)
    base = seeded_gaussian(4, 6, 400)
    direction = seeded_gaussian(4, 6, 401)
    deg = probe.degree
    report = taylor_residual_check(probe, base, direction, orders=(deg, deg + 1))
    for result in report.results:
        assert result.residuals.max() <= 1e-12


def test_finite_difference_agrees_with_exact_derivative():
    probe, base, direction = exp_setup(seed=5)
    exact = probe.directional_derivative(base, direction, 1)
    approx = finite_difference_directional(probe, base, direction)
    assert approx == pytest.approx(exact, rel=1e-5)


def test_first_order_gap_decays_quadratically():
    probe, base, direction = exp_setup(seed=7)
    slope, scales, gaps = first_order_gap_slope(probe, base, direction)
    assert slope >= 1.8
    assert np.all(np.diff(gaps) < 0)
    assert len(scales) == len(gaps)


def test_report_json():
    probe, base, direction = exp_setup()
    blob = json.loads(taylor_residual_check(probe, base, direction).to_json())
    assert [entry["order"] for entry in blob] == [1, 2, 3]
    assert all(len(entry["residuals"]) == 8 for entry in blob)


@pytest.mark.parametrize("probe", [
    LinearProbe(seeded_gaussian(8, 16, 50)),
    MeanProbe(8, 16),
])
def test_drift_bound_holds_on_sampled_pairs(probe):
    gen = GaussianMeanShiftDrift(n_tokens=8, dim=16, seed=0)
    report = drift_bound_check(probe, gen, n_samples=300)
    assert report.violations == 0
    assert report.min_slack >= 0.0
    assert report.max_slack >= report.min_slack
    assert report.lipschitz == probe.lipschitz


def test_sampled_pairs_respect_declared_budgets():
    gen = GaussianMeanShiftDrift(n_tokens=6, dim=10, delta=0.2, model_eps=0.1,
                                 drift_gamma=0.05, seed=2)
    for i in range(50):
        x, b_tilde, d_meas, e_meas = gen.sample(i)
        assert 0.0 <= d_meas <= 0.2 + 1e-12
        assert 0.0 <= e_meas <= 0.1 + 1e-12
        gap = float(np.linalg.norm(x - b_tilde))
        assert gap <= d_meas + e_meas + gen.drift_gamma + 1e-12


def test_sampling_is_deterministic_per_index():
    gen = GaussianMeanShiftDrift(n_tokens=4, dim=5, seed=9)
    first = gen.sample(3)
    second = gen.sample(3)
    for a, b in zip(first[:2], second[:2]):
        np.testing.assert_array_equal(a, b)
    assert first[2:] == second[2:]


def test_degenerate_generator_gives_zero_slack():
    gen = GaussianMeanShiftDrift(n_tokens=4, dim=5, delta=0.0, model_eps=0.0,
                                 drift_gamma=0.0, seed=1)
    report = drift_bound_check(MeanProbe(4, 5), gen, n_samples=20)
    assert report.violations == 0
    assert report.min_slack == 0.0
    assert report.max_slack == 0.0
    assert report.tv_upper_bound == 0.0


def test_tv_bound_matches_gaussian_mean_shift_formula():
    gen = GaussianMeanShiftDrift(n_tokens=4, dim=5, drift_gamma=0.3)
    want = 2.0 * norm.cdf(0.3 / 2.0) - 1.0
    assert gen.tv_upper_bound() == pytest.approx(want, abs=1e-12)
    assert 0.0 < gen.tv_upper_bound() < 1.0


def test_drift_report_json():
    gen = GaussianMeanShiftDrift(n_tokens=4, dim=5, seed=0)
    report = drift_bound_check(MeanProbe(4, 5), gen, n_samples=10)
    blob = json.loads(report.to_json())
    for key in ("n_samples", "violations", "min_slack", "lipschitz", "tv_upper_bound"):
        assert key in blob
    assert blob["n_samples"] == 10


def test_taylor_report_slope_lookup():
    report = TaylorReport([])
    with pytest.raises(KeyError):
        report.slope(1)
    assert isinstance(DriftReport(1, 0, 0.0, 0.0, 1.0, 0.0, 0.0), DriftReport)
