import numpy as np
import pytest
from sklearn.exceptions import NotFittedError

from fastcache.interp.background import (
    BackgroundModel,
    decompose,
    fit_background,
    motion_residual,
)


def planted_ar2(seed=42, n=5, d=6, steps=60, noise=0.0):
    """History following X_t = c + X_{t-1} A1^T + X_{t-2} A2^T + noise."""
    rng = np.random.default_rng(seed)
    a1 = rng.normal(size=(d, d))
    a1 *= 0.4 / max(abs(np.linalg.eigvals(a1)))
    a2 = rng.normal(size=(d, d))
    a2 *= 0.2 / max(abs(np.linalg.eigvals(a2)))
    c = rng.normal(scale=0.5, size=d) + 1.0
    xs = [rng.normal(size=(n, d)), rng.normal(size=(n, d))]
    for _ in range(steps - 2):
        nxt = c + xs[-1] @ a1.T + xs[-2] @ a2.T
        if noise:
            nxt = nxt + rng.normal(scale=noise, size=(n, d))
        xs.append(nxt)
    return xs, (a1, a2, c)


def test_exact_ar2_recovery():
    xs, (a1, a2, c) = planted_ar2(noise=0.0)
    model = fit_background(xs, k=2)
    np.testing.assert_allclose(model.theta_[0], a1, atol=1e-7)
    np.testing.assert_allclose(model.theta_[1], a2, atol=1e-7)
    np.testing.assert_allclose(model.intercept_, c, atol=1e-7)
    assert model.residual_ < 1e-6


def test_noisy_ar2_recovery_within_noise_floor():
    xs, (a1, a2, c) = planted_ar2(noise=1e-4)
    model = fit_background(xs, k=2)
    assert np.max(np.abs(model.theta_[0] - a1)) < 1e-2
    assert np.max(np.abs(model.theta_[1] - a2)) < 1e-2


def test_geometric_ar1_is_identified_exactly():
    rng = np.random.default_rng(3)
    x0 = rng.normal(size=(6, 4))
    xs = [x0 * 0.5**t for t in range(10)]
    model = fit_background(xs, k=1)
    np.testing.assert_allclose(model.theta_[0], 0.5 * np.eye(4), atol=1e-9)
    np.testing.assert_allclose(model.intercept_, np.zeros(4), atol=1e-9)
    pred = model.predict(xs[:3])
    np.testing.assert_allclose(pred, xs[3], atol=1e-9)


def test_prediction_uses_most_recent_history_last():
    xs, _ = planted_ar2(noise=0.0, steps=20)
    model = fit_background(xs, k=2)
    # history[-1] is X_{t-1}
    want = model.intercept_ + xs[14] @ model.theta_[0].T + xs[13] @ model.theta_[1].T
    np.testing.assert_allclose(model.predict(xs[:15]), want, rtol=1e-12)


def test_constant_history_hits_ridge_fallback():
    frame = np.full((4, 3), 2.5)
    xs = [frame.copy() for _ in range(8)]
    with pytest.warns(UserWarning, match="rank-deficient"):
        model = fit_background(xs, k=2)
    np.testing.assert_allclose(model.predict(xs[:4]), frame, atol=1e-4)


def test_decompose_reconstructs_exactly_on_planted_data():
    xs, _ = planted_ar2(noise=1e-4)
    model = fit_background(xs[:40], k=2)
    for t in range(40, len(xs)):
        b, m = decompose(xs[t], model, xs[:t])
        # entries sit near 1 and b tracks x closely, so x - b is exact
        np.testing.assert_array_equal(b + m, np.asarray(xs[t], dtype=np.float64))
        np.testing.assert_array_equal(m, motion_residual(xs[t], model, xs[:t]))


def test_decompose_reconstruction_generic_history():
    rng = np.random.default_rng(11)
    xs = list(np.cumsum(rng.normal(size=(12, 5, 4)), axis=0))
    model = fit_background(xs, k=2)
    b, m = decompose(xs[-1], model, xs[:-1])
    np.testing.assert_allclose(b + m, xs[-1], rtol=1e-13, atol=1e-13)


def test_smooth_is_exact_ema():
    model = BackgroundModel(momentum=0.7)
    prev = np.arange(6.0).reshape(2, 3)
    new = np.ones((2, 3))
    np.testing.assert_array_equal(model.smooth(prev, new), 0.7 * prev + (1.0 - 0.7) * new)
    with pytest.raises(ValueError):
        model.smooth(prev, np.ones((3, 2)))


def test_requires_fit_before_predict():
    with pytest.raises(NotFittedError):
        BackgroundModel().predict([np.zeros((2, 2))])


def test_history_validation():
    xs = [np.zeros((3, 2)) for _ in range(2)]
    with pytest.raises(ValueError, match="k\\+1"):
        BackgroundModel(k=2).fit(xs)
    ragged = [np.zeros((3, 2)), np.zeros((3, 2)), np.zeros((2, 2))]
    with pytest.raises(ValueError, match="shape"):
        BackgroundModel(k=2).fit(ragged)
    xs_ok, _ = planted_ar2(steps=10)
    model = fit_background(xs_ok, k=2)
    with pytest.raises(ValueError, match="at least k"):
        model.predict(xs_ok[:1])


def test_parameter_validation():
    with pytest.raises(ValueError):
        BackgroundModel(k=0).fit([np.zeros((2, 2))])
    with pytest.raises(ValueError, match="momentum"):
        BackgroundModel(momentum=1.5).fit([np.zeros((2, 2)), np.zeros((2, 2))])


def test_sklearn_param_interface():
    model = BackgroundModel(k=3, momentum=0.5, ridge=1e-6)
    assert model.get_params() == {"k": 3, "momentum": 0.5, "ridge": 1e-6}
    model.set_params(k=1)
    assert model.k == 1
