"""Background/motion decomposition via a k-lag token-wise autoregression.

Each token row is predicted from its own k previous rows with coefficients
shared across tokens and time: B_t = theta_0 + sum_j X_{t-j} @ theta_j.T.
The motion residual is M_t = X_t - B_t, so B + M reconstructs X. All
arithmetic is float64.
"""

from __future__ import annotations

import warnings

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from ..validation import as_matrix, check_positive_int

__all__ = ["BackgroundModel", "fit_background", "motion_residual", "decompose"]


def _history_matrices(history, k):
    mats = [as_matrix(h, f"history[{i}]", dtype=np.float64) for i, h in enumerate(history)]
    if len(mats) < k + 1:
        raise ValueError(f"need at least k+1 = {k + 1} history matrices, got {len(mats)}")
    shape = mats[0].shape
    for m in mats:
        if m.shape != shape:
            raise ValueError("history matrices must share one shape")
    return mats


class BackgroundModel(BaseEstimator):
    """AR(k) background predictor with an EMA refresh knob (momentum)."""

    def __init__(self, k=2, momentum=0.7, ridge=1e-8):
        self.k = k
        self.momentum = momentum
        self.ridge = ridge

    def fit(self, history, y=None):
        k = check_positive_int(self.k, "k")
        if not 0.0 <= self.momentum <= 1.0:
            raise ValueError("momentum must lie in [0, 1]")
        mats = _history_matrices(history, k)
        dim = mats[0].shape[1]

        feats, targets = [], []
        for t in range(k, len(mats)):
            feats.append(np.hstack([mats[t - j] for j in range(1, k + 1)]))
            targets.append(mats[t])
        x = np.vstack(feats)
        y_ = np.vstack(targets)
        a = np.hstack([x, np.ones((x.shape[0], 1))])

        sol, _, rank, _ = np.linalg.lstsq(a, y_, rcond=None)
        if rank < a.shape[1]:
            warnings.warn(
                f"rank-deficient design (rank {rank} < {a.shape[1]}); ridge fallback"
            )
            penalty = np.eye(a.shape[1]) * float(self.ridge)
            penalty[-1, -1] = 0.0  # intercept unpenalized
            sol = np.linalg.solve(a.T @ a + penalty, a.T @ y_)

        self.theta_ = [sol[j * dim : (j + 1) * dim].T.copy() for j in range(k)]
        self.intercept_ = sol[-1].copy()
        self.residual_ = float(np.linalg.norm(a @ sol - y_))
        self.dim_ = dim
        return self

    def _check_fitted(self):
        if not hasattr(self, "theta_"):
            raise NotFittedError("BackgroundModel is not fitted; call fit(history) first")

    def predict(self, history) -> np.ndarray:
        """Background for the next step from the last k history matrices.

        history[-j] plays the role of X_{t-j}.
        """
        self._check_fitted()
        k = int(self.k)
        if len(history) < k:
            raise ValueError(f"need at least k = {k} history matrices, got {len(history)}")
        out = np.zeros_like(as_matrix(history[-1], dtype=np.float64)) + self.intercept_
        for j in range(1, k + 1):
            out += as_matrix(history[-j], dtype=np.float64) @ self.theta_[j - 1].T
        return out

    def smooth(self, prev_background, new_background) -> np.ndarray:
        """EMA refresh between refits: momentum*prev + (1-momentum)*new."""
        prev_b = np.asarray(prev_background, dtype=np.float64)
        new_b = np.asarray(new_background, dtype=np.float64)
        if prev_b.shape != new_b.shape:
            raise ValueError("background shapes differ")
        m = float(self.momentum)
        return m * prev_b + (1.0 - m) * new_b


def fit_background(history, k=2, ridge=1e-8) -> BackgroundModel:
    """Least-squares AR(k) fit; in-sample residual norm lands on ``residual_``."""
    return BackgroundModel(k=k, ridge=ridge).fit(history)


def motion_residual(x_t, model: BackgroundModel, history) -> np.ndarray:
    """M_t = X_t - B_t."""
    x = as_matrix(x_t, "x_t", dtype=np.float64)
    return x - model.predict(history)


def decompose(x_t, model: BackgroundModel, history):
    """(B_t, M_t) with B_t + M_t = X_t."""
    b = model.predict(history)
    x = as_matrix(x_t, "x_t", dtype=np.float64)
    return b, x - b
