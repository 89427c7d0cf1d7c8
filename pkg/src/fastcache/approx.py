"""Affine block substitutes and their offline ridge calibration.

A LinearApproximator stands in for a skipped block: H = W @ h + b applied
row-wise. Fitting is closed-form ridge least squares over (input, output)
pairs recorded from full-compute traces; the intercept is left unpenalized
by centering. Weights are kept in float64 and application casts back to the
input dtype, so float32 engine states stay float32.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .traceio import TraceFormatError, read_container, write_container
from .validation import as_matrix, check_finite

__all__ = [
    "LinearApproximator",
    "ApproximatorFit",
    "identity_approximator",
    "fit_affine_map",
    "fit_approximators",
    "save_approximators",
    "load_approximators",
]


@dataclass(frozen=True)
class LinearApproximator:
    """Row-wise affine map h -> h @ W.T + b with W out_dim x in_dim."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = as_matrix(self.weight, "weight", dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        check_finite(b, "bias")
        if b.shape[0] != w.shape[0]:
            raise ValueError(f"bias length {b.shape[0]} != out_dim {w.shape[0]}")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def apply(self, h) -> np.ndarray:
        h = np.asarray(h)
        if h.ndim != 2 or h.shape[1] != self.in_dim:
            raise ValueError(f"expected rows of dim {self.in_dim}, got shape {h.shape}")
        out = h.astype(np.float64) @ self.weight.T + self.bias
        return out.astype(h.dtype, copy=False)


def identity_approximator(dim: int) -> LinearApproximator:
    return LinearApproximator(np.eye(dim), np.zeros(dim))


@dataclass
class ApproximatorFit:
    """Per-layer calibration result with held-out diagnostics."""

    approximators: list = field(default_factory=list)
    holdout_error: list = field(default_factory=list)     # relative Frobenius
    identity_error: list = field(default_factory=list)    # same metric, W=I, b=0
    n_pairs: int = 0

    def __iter__(self):
        return iter(self.approximators)


def fit_affine_map(inputs, targets, ridge=1e-6) -> LinearApproximator:
    """Closed-form ridge fit of targets ~ inputs @ W.T + b (intercept free)."""
    x = as_matrix(inputs, "inputs", dtype=np.float64)
    y = as_matrix(targets, "targets", dtype=np.float64)
    if x.shape[0] != y.shape[0]:
        raise ValueError("inputs and targets disagree in row count")
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    x_mean = x.mean(axis=0)
    y_mean = y.mean(axis=0)
    xc = x - x_mean
    yc = y - y_mean
    if ridge > 0:
        gram = xc.T @ xc + ridge * np.eye(x.shape[1])
        w = np.linalg.solve(gram, xc.T @ yc).T
    else:
        w = np.linalg.lstsq(xc, yc, rcond=None)[0].T
    b = y_mean - w @ x_mean
    return LinearApproximator(w, b)


def _relative_error(approx: LinearApproximator, x, y) -> float:
    pred = x @ approx.weight.T + approx.bias
    denom = np.linalg.norm(y)
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(pred - y) / denom)


def _layer_pairs(traces, layer):
    xs, ys = [], []
    for tr in traces:
        for frame in tr.frames:
            if frame.layer_inputs is None or frame.layer_outputs is None:
                continue
            xs.append(np.asarray(frame.layer_inputs[layer], dtype=np.float64))
            ys.append(np.asarray(frame.layer_outputs[layer], dtype=np.float64))
    return xs, ys


def fit_approximators(traces, ridge=1e-6, holdout_fraction=0.2) -> ApproximatorFit:
    """Fit one approximator per layer from recorded full-compute traces.

    Held-out metrics come from a fit on the leading (1 - holdout_fraction) of
    timesteps, scored on the rest; the returned approximator is refit on all
    pairs. Too few pairs (or no traces) degrade to identity with a warning.
    """
    traces = [t for t in traces if t is not None]
    layers = traces[0].header["layers"] if traces else 0
    dim = traces[0].header["dim"] if traces else 0
    fit = ApproximatorFit()

    if not traces or layers == 0:
        warnings.warn("no calibration traces given; using identity approximators")
        return fit

    for layer in range(layers):
        xs, ys = _layer_pairs(traces, layer)
        n_rows = sum(x.shape[0] for x in xs)
        if layer == 0:
            fit.n_pairs = n_rows
        if n_rows < dim + 1:
            warnings.warn(
                f"layer {layer}: {n_rows} pairs < dim+1 = {dim + 1}; "
                "underdetermined, falling back to identity"
            )
            ident = identity_approximator(dim)
            fit.approximators.append(ident)
            if xs:
                x_all = np.vstack(xs)
                y_all = np.vstack(ys)
                err = _relative_error(ident, x_all, y_all)
            else:
                err = float("nan")
            fit.holdout_error.append(err)
            fit.identity_error.append(err)
            continue

        split = max(1, int(round(len(xs) * (1.0 - holdout_fraction))))
        split = min(split, len(xs) - 1) if len(xs) > 1 else len(xs)
        x_train = np.vstack(xs[:split])
        y_train = np.vstack(ys[:split])
        if split < len(xs):
            x_held = np.vstack(xs[split:])
            y_held = np.vstack(ys[split:])
        else:
            x_held, y_held = x_train, y_train

        probe = fit_affine_map(x_train, y_train, ridge)
        fit.holdout_error.append(_relative_error(probe, x_held, y_held))
        fit.identity_error.append(
            _relative_error(identity_approximator(dim), x_held, y_held)
        )
        fit.approximators.append(
            fit_affine_map(np.vstack(xs), np.vstack(ys), ridge)
        )
    return fit


def save_approximators(fit: ApproximatorFit, destination, ridge=None) -> int:
    """Write fitted approximators as a weight container.

    Payloads are binary32, so round-tripped weights carry float32 precision;
    the per-layer error table rides along in the header unchanged.
    """
    header = {
        "kind": "approximators",
        "layers": len(fit.approximators),
        "n_pairs": int(fit.n_pairs),
        "holdout_error": [float(e) for e in fit.holdout_error],
        "identity_error": [float(e) for e in fit.identity_error],
    }
    if ridge is not None:
        header["ridge"] = float(ridge)
    arrays = []
    for a in fit.approximators:
        arrays.append(a.weight)
        arrays.append(a.bias)
    return write_container(destination, header, arrays)


def load_approximators(source) -> ApproximatorFit:
    header, arrays = read_container(source)
    if header.get("kind") != "approximators":
        raise TraceFormatError(
            f"expected an approximators container, got kind {header.get('kind')!r}"
        )
    layers = header.get("layers")
    if not isinstance(layers, int) or len(arrays) != 2 * layers:
        raise TraceFormatError(
            f"header declares {layers} layers but payload has {len(arrays)} arrays"
        )
    fit = ApproximatorFit(n_pairs=int(header.get("n_pairs", 0)))
    for l in range(layers):
        fit.approximators.append(LinearApproximator(arrays[2 * l], arrays[2 * l + 1]))
    fit.holdout_error = list(header.get("holdout_error", []))
    fit.identity_error = list(header.get("identity_error", []))
    return fit
