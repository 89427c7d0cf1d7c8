"""Analytic scoring functions used by the interaction and bound checks.

Each probe exposes value(X) and exact directional derivatives along a
matrix direction, so Taylor residual slopes are measured against a
ground-truth expansion rather than finite differences. LinearProbe and
MeanProbe additionally carry exact global Lipschitz constants (w.r.t. the
Frobenius norm) for the drift bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PolynomialProbe",
    "ExpLinearProbe",
    "LinearProbe",
    "MeanProbe",
    "finite_difference_directional",
]


def _inner(a, b) -> float:
    return float(np.sum(np.asarray(a, dtype=np.float64) * np.asarray(b, dtype=np.float64)))


@dataclass(frozen=True)
class ExpLinearProbe:
    """v(X) = exp(<A, X>)."""

    coeffs: np.ndarray

    def value(self, x) -> float:
        return math.exp(_inner(self.coeffs, x))

    def directional_derivative(self, base, direction, order: int) -> float:
        g = _inner(self.coeffs, direction)
        return self.value(base) * g**order


@dataclass(frozen=True)
class PolynomialProbe:
    """v(X) = sum_k c_k * <A_k, X>^p_k, exact derivatives of every order."""

    coefficients: tuple
    directions: tuple
    powers: tuple

    def __post_init__(self):
        if not (len(self.coefficients) == len(self.directions) == len(self.powers)):
            raise ValueError("term lists must share one length")
        if any(int(p) < 0 for p in self.powers):
            raise ValueError("powers must be non-negative integers")

    @property
    def degree(self) -> int:
        return max((int(p) for p in self.powers), default=0)

    def value(self, x) -> float:
        return float(sum(
            c * _inner(a, x) ** int(p)
            for c, a, p in zip(self.coefficients, self.directions, self.powers)
        ))

    def directional_derivative(self, base, direction, order: int) -> float:
        total = 0.0
        for c, a, p in zip(self.coefficients, self.directions, self.powers):
            p = int(p)
            if order > p:
                continue
            falling = math.perm(p, order)  # p * (p-1) * ... * (p-order+1)
            total += c * falling * _inner(a, base) ** (p - order) * _inner(a, direction) ** order
        return float(total)

    @classmethod
    def random(cls, n_tokens, dim, seed, n_terms=4, max_power=3) -> "PolynomialProbe":
        rng = np.random.default_rng(seed)
        coeffs, mats, powers = [], [], []
        for _ in range(n_terms):
            coeffs.append(float(rng.uniform(-1.0, 1.0)))
            mats.append(rng.normal(size=(n_tokens, dim)) / np.sqrt(n_tokens * dim))
            powers.append(int(rng.integers(1, max_power + 1)))
        return cls(tuple(coeffs), tuple(mats), tuple(powers))


@dataclass(frozen=True)
class LinearProbe:
    """v(X) = <A, X>; globally Lipschitz with L = ||A||_F."""

    coeffs: np.ndarray
    lipschitz: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "lipschitz", float(np.linalg.norm(self.coeffs)))

    def value(self, x) -> float:
        return _inner(self.coeffs, x)

    def directional_derivative(self, base, direction, order: int) -> float:
        if order == 0:
            return self.value(base)
        if order == 1:
            return _inner(self.coeffs, direction)
        return 0.0


@dataclass(frozen=True)
class MeanProbe:
    """v(X) = mean of all entries; L = 1/sqrt(N*D)."""

    n_tokens: int
    dim: int
    lipschitz: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "lipschitz", 1.0 / math.sqrt(self.n_tokens * self.dim))

    def value(self, x) -> float:
        return float(np.mean(np.asarray(x, dtype=np.float64)))

    def directional_derivative(self, base, direction, order: int) -> float:
        if order == 0:
            return self.value(base)
        if order == 1:
            return float(np.mean(np.asarray(direction, dtype=np.float64)))
        return 0.0


def finite_difference_directional(probe, base, direction, step=1e-5) -> float:
    """Central-difference first derivative, cross-check only."""
    base = np.asarray(base, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    scale = step * max(1.0, float(np.linalg.norm(base)) / max(float(np.linalg.norm(direction)), 1e-30))
    up = probe.value(base + scale * direction)
    down = probe.value(base - scale * direction)
    return (up - down) / (2.0 * scale)
