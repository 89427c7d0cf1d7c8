"""Transformer-level caching state machine and run orchestration.

Per timestep: token saliency against the previous timestep's input, a
motion/static partition, an affine bypass (optionally blended against the
previous timestep's cached rows) for static tokens, reassembly into the
stack input, then the block loop where each layer independently decides
skip vs compute from the relative change of its input.

A skipped block substitutes its calibrated affine approximator (mode
"linear") or replays its cached previous output (mode "reuse"). The first
timestep always computes fully; a zero-norm reference also forces compute
and flags the decision.

FastCacheEngine wraps this as an estimator: fit() calibrates per-layer
approximators from recorded traces, transform() runs cached generation.
"""

from __future__ import annotations

import csv
import time
import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .approx import LinearApproximator, fit_approximators, identity_approximator
from .model import ToyModel, block_flops, linear_flops
from .saliency import (
    SaliencyConfig,
    blend,
    compute_saliency,
    partition_tokens,
    reassemble,
    static_bypass,
)
from .stats import (
    ChiSquareTest,
    DegenerateReferenceError,
    cache_error_bound,
    relative_change,
    should_skip,
)
from .traceio import Trace, TraceFrame
from .validation import as_matrix

__all__ = [
    "EngineConfig",
    "CacheDecision",
    "BlockCacheSlot",
    "EngineState",
    "RunReport",
    "block_step",
    "fastcache_timestep",
    "run_generation",
    "run_full",
    "run_fixed_interval",
    "record_full_trace",
    "replay_gate_decisions",
    "FastCacheEngine",
]

SKIP_MODES = ("linear", "reuse")

DECISION_CSV_FIELDS = ("t", "l", "delta", "threshold", "skipped", "mode")


@dataclass(frozen=True)
class EngineConfig:
    significance: float = 0.05
    tau_s: float = 0.05
    gamma: float = 0.5
    skip_mode: str = "linear"
    window: int = 8
    token_reduction_enabled: bool = True
    block_cache_enabled: bool = True
    blend_enabled: bool = True

    def __post_init__(self):
        if not 0.0 < self.significance < 1.0:
            raise ValueError(f"significance must lie in (0, 1), got {self.significance}")
        if self.tau_s < 0:
            raise ValueError(f"tau_s must be non-negative, got {self.tau_s}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.skip_mode not in SKIP_MODES:
            raise ValueError(f"skip_mode must be one of {SKIP_MODES}, got {self.skip_mode!r}")
        if int(self.window) < 1:
            raise ValueError(f"window must be a positive integer, got {self.window}")


@dataclass
class CacheDecision:
    timestep: int
    layer: int
    delta: float | None
    threshold: float
    skipped: bool
    skip_mode: str
    bound: float
    forced: bool = False  # no usable reference state (first step or zero norm)


@dataclass
class BlockCacheSlot:
    approximator: LinearApproximator
    window: int = 8
    prev_input: np.ndarray | None = None
    prev_output: np.ndarray | None = None
    delta_history: deque = field(default_factory=deque)

    def __post_init__(self):
        self.delta_history = deque(self.delta_history, maxlen=int(self.window))


def block_step(slot: BlockCacheSlot, x, block, test: ChiSquareTest, mode: str,
               timestep: int = -1, layer: int = -1):
    """One gated block application; updates the slot, returns (output, decision)."""
    bound = cache_error_bound(test)
    delta = None
    skipped = False
    forced = False

    if slot.prev_input is None:
        out = block.forward(x)
        forced = True
    else:
        try:
            delta = relative_change(x, slot.prev_input)
        except DegenerateReferenceError:
            out = block.forward(x)
            forced = True
        else:
            slot.delta_history.append(delta)
            if should_skip(test, delta):
                skipped = True
                if mode == "linear":
                    out = slot.approximator.apply(x)
                else:
                    out = slot.prev_output.copy()
            else:
                out = block.forward(x)

    slot.prev_input = x
    slot.prev_output = out
    decision = CacheDecision(
        timestep=timestep, layer=layer, delta=delta, threshold=test.threshold,
        skipped=skipped, skip_mode=mode, bound=bound, forced=forced,
    )
    return out, decision


class EngineState:
    """Mutable per-stream state: slots, previous inputs, decision log."""

    def __init__(self, model: ToyModel, cfg: EngineConfig, approximators=None,
                 bypass: LinearApproximator | None = None):
        if approximators is not None and len(approximators) != model.n_layers:
            raise ValueError(
                f"need {model.n_layers} approximators, got {len(approximators)}"
            )
        if approximators is None:
            approximators = [identity_approximator(model.dim) for _ in model.blocks]
        self.model = model
        self.cfg = cfg
        self.saliency_cfg = SaliencyConfig(cfg.tau_s, cfg.gamma)
        self.bypass = bypass if bypass is not None else identity_approximator(model.dim)
        self.slots = [BlockCacheSlot(a, window=cfg.window) for a in approximators]
        self.test: ChiSquareTest | None = None
        self.prev_x = None
        self.prev_h0 = None
        self.decisions: list[CacheDecision] = []
        self.t = 0

    def _reduce_tokens(self, x):
        sal = compute_saliency(x, self.prev_x)
        part = partition_tokens(sal, self.saliency_cfg)
        if part.static_indices.size == 0:
            return x
        motion_rows = x[part.motion_indices]
        static_rows = static_bypass(x[part.static_indices], self.bypass)
        if self.cfg.blend_enabled and self.cfg.gamma < 1.0 and self.prev_h0 is not None:
            static_rows = blend(
                static_rows, self.prev_h0[part.static_indices], self.cfg.gamma
            )
        return reassemble(part, motion_rows, static_rows)

    def step(self, x_t) -> np.ndarray:
        x = as_matrix(x_t, "x_t")
        if self.cfg.token_reduction_enabled and self.prev_x is not None:
            h = self._reduce_tokens(x)
        else:
            h = x
        self.prev_x = x
        self.prev_h0 = h

        if self.cfg.block_cache_enabled:
            if self.test is None:
                self.test = ChiSquareTest(dof=h.size, significance=self.cfg.significance)
            for layer, (block, slot) in enumerate(zip(self.model.blocks, self.slots)):
                h, decision = block_step(
                    slot, h, block, self.test, self.cfg.skip_mode,
                    timestep=self.t, layer=layer,
                )
                self.decisions.append(decision)
        else:
            for block in self.model.blocks:
                h = block.forward(h)
        self.t += 1
        return h


def fastcache_timestep(state: EngineState, x_t) -> np.ndarray:
    return state.step(x_t)


@dataclass
class RunReport:
    """Counters and log for one generation run; recounted from decisions."""

    method: str
    wall_ms: float
    n_timesteps: int
    n_layers: int
    n_tokens: int
    dim: int
    skip_rate: float
    skips: int
    mean_delta: float | None
    bound_violations: int
    flops_full: float
    flops_executed: float
    flops_saved: float
    flops_saved_gross: float
    per_layer: list
    decisions: list
    outputs: list

    def summary_dict(self) -> dict:
        return {
            "method": self.method,
            "wall_ms": self.wall_ms,
            "timesteps": self.n_timesteps,
            "layers": self.n_layers,
            "skip_rate": self.skip_rate,
            "skips": self.skips,
            "mean_delta": self.mean_delta,
            "bound_violations": self.bound_violations,
            "flops_full": self.flops_full,
            "flops_executed": self.flops_executed,
            "flops_saved": self.flops_saved,
            "flops_saved_gross": self.flops_saved_gross,
            "per_layer": self.per_layer,
        }

    def write_decisions_csv(self, destination) -> None:
        close = False
        if hasattr(destination, "write"):
            fh = destination
        else:
            fh = open(destination, "w", newline="")
            close = True
        try:
            w = csv.writer(fh)
            w.writerow(DECISION_CSV_FIELDS)
            for d in self.decisions:
                w.writerow([
                    d.timestep, d.layer,
                    "" if d.delta is None else repr(d.delta),
                    repr(d.threshold), int(d.skipped), d.skip_mode,
                ])
        finally:
            if close:
                fh.close()


def _report_from_decisions(method, model, n_tokens, wall_ms, n_steps, decisions,
                           outputs, extra_flops=0.0, forced_layout=None):
    layers = model.n_layers
    bf = block_flops(n_tokens, model.dim)
    lf = linear_flops(n_tokens, model.dim)
    cells = n_steps * layers
    skips = sum(1 for d in decisions if d.skipped)
    linear_skips = sum(1 for d in decisions if d.skipped and d.skip_mode == "linear")
    violations = sum(
        1 for d in decisions
        if d.skipped and d.delta is not None and d.delta > d.bound
    )
    deltas = [d.delta for d in decisions if d.delta is not None]
    per_layer = []
    for l in range(layers):
        own = [d for d in decisions if d.layer == l]
        own_sk = sum(1 for d in own if d.skipped)
        own_dl = [d.delta for d in own if d.delta is not None]
        per_layer.append({
            "layer": l,
            "decisions": len(own),
            "skips": own_sk,
            "skip_rate": own_sk / len(own) if own else 0.0,
            "mean_delta": float(np.mean(own_dl)) if own_dl else None,
        })
    flops_full = cells * bf
    flops_executed = (cells - skips) * bf + linear_skips * lf + extra_flops
    return RunReport(
        method=method,
        wall_ms=wall_ms,
        n_timesteps=n_steps,
        n_layers=layers,
        n_tokens=n_tokens,
        dim=model.dim,
        skip_rate=skips / cells if cells else 0.0,
        skips=skips,
        mean_delta=float(np.mean(deltas)) if deltas else None,
        bound_violations=violations,
        flops_full=flops_full,
        flops_executed=flops_executed,
        flops_saved=flops_full - flops_executed,
        flops_saved_gross=skips * bf,
        per_layer=per_layer,
        decisions=decisions,
        outputs=outputs,
    )


def run_generation(model: ToyModel, inputs, cfg: EngineConfig,
                   approximators=None, method="fastcache") -> RunReport:
    """Drive the cached engine over a sequence of timestep inputs."""
    inputs = list(inputs)
    state = EngineState(model, cfg, approximators)
    outputs = []
    start = time.perf_counter()
    for x in inputs:
        outputs.append(state.step(x))
    wall_ms = (time.perf_counter() - start) * 1e3
    n_tokens = inputs[0].shape[0] if inputs else 0
    # bypass matmul cost when token reduction ran (first timestep has no stage)
    extra = 0.0
    if cfg.token_reduction_enabled and len(inputs) > 1:
        extra = (len(inputs) - 1) * linear_flops(n_tokens, model.dim)
    return _report_from_decisions(
        method, model, n_tokens, wall_ms, len(inputs), state.decisions, outputs,
        extra_flops=extra,
    )


def run_full(model: ToyModel, inputs, method="full") -> RunReport:
    """Plain forward over every timestep; the bitwise reference."""
    inputs = list(inputs)
    outputs = []
    start = time.perf_counter()
    for x in inputs:
        h = x
        for block in model.blocks:
            h = block.forward(h)
        outputs.append(h)
    wall_ms = (time.perf_counter() - start) * 1e3
    n_tokens = inputs[0].shape[0] if inputs else 0
    return _report_from_decisions(method, model, n_tokens, wall_ms,
                                  len(inputs), [], outputs)


def run_fixed_interval(model: ToyModel, inputs, every_k: int = 2,
                       method=None) -> RunReport:
    """Baseline: reuse every k-th block's cached output after the first step."""
    if every_k < 1:
        raise ValueError("every_k must be >= 1")
    inputs = list(inputs)
    method = method or f"interval{every_k}"
    prev_out = [None] * model.n_layers
    outputs = []
    skips = 0
    start = time.perf_counter()
    for t, x in enumerate(inputs):
        h = x
        for l, block in enumerate(model.blocks):
            if t > 0 and (l + 1) % every_k == 0:
                h = prev_out[l]
                skips += 1
            else:
                h = block.forward(h)
            prev_out[l] = h
        outputs.append(h)
    wall_ms = (time.perf_counter() - start) * 1e3
    n_tokens = inputs[0].shape[0] if inputs else 0
    cells = len(inputs) * model.n_layers
    bf = block_flops(n_tokens, model.dim)
    report = _report_from_decisions(method, model, n_tokens, wall_ms,
                                    len(inputs), [], outputs)
    report.skips = skips
    report.skip_rate = skips / cells if cells else 0.0
    report.flops_executed = (cells - skips) * bf
    report.flops_saved = report.flops_full - report.flops_executed
    report.flops_saved_gross = skips * bf
    return report


def record_full_trace(model: ToyModel, inputs, schedule_desc=None, seed=None,
                      with_pairs=True) -> Trace:
    """Full-compute run recorded as a Trace (float32, per-layer pairs optional)."""
    inputs = [np.ascontiguousarray(x, dtype=np.float32) for x in inputs]
    frames = []
    for x in inputs:
        h = x
        ins, outs = [], []
        for block in model.blocks:
            ins.append(h)
            h = block.forward(h)
            outs.append(h)
        frames.append(TraceFrame(x, ins, outs) if with_pairs else TraceFrame(x))
    n, d = (inputs[0].shape if inputs else (0, 0))
    header = {
        "kind": "trace",
        "n_tokens": int(n),
        "dim": int(d),
        "layers": model.n_layers,
        "timesteps": len(inputs),
        "dtype": "float32",
        "has_layer_pairs": bool(with_pairs),
        "schedule": schedule_desc,
        "seed": seed,
        "model": model.descriptor(),
    }
    return Trace(header, frames)


def replay_gate_decisions(trace: Trace, significance: float):
    """Offline gate evaluation over a recorded full-compute trace.

    Applies the skip rule to the recorded per-layer block inputs of
    consecutive timesteps, with no state feedback, so decision counts are
    directly comparable across significance levels on identical deltas.
    """
    if not trace.has_layer_pairs:
        raise ValueError("trace has no per-layer pairs; record with pairs enabled")
    layers = trace.header["layers"]
    dof = trace.header["n_tokens"] * trace.header["dim"]
    test = ChiSquareTest(dof=dof, significance=significance)
    decisions = []
    for t in range(1, len(trace.frames)):
        for l in range(layers):
            cur = trace.frames[t].layer_inputs[l]
            prev = trace.frames[t - 1].layer_inputs[l]
            try:
                delta = relative_change(cur, prev)
            except DegenerateReferenceError:
                decisions.append(CacheDecision(t, l, None, test.threshold, False,
                                               "linear", cache_error_bound(test), True))
                continue
            decisions.append(CacheDecision(
                t, l, delta, test.threshold, should_skip(test, delta),
                "linear", cache_error_bound(test),
            ))
    return decisions


class FastCacheEngine(BaseEstimator):
    """Estimator facade: fit() calibrates approximators, transform() runs cached.

    fit(X) accepts a Trace with per-layer pairs (or a list of them); without
    usable pairs it falls back to identity approximators with a warning.
    transform(X) accepts a Trace or a sequence of N x D matrices and returns
    the stacked final hidden states (T x N x D); the RunReport lands on
    ``report_``.
    """

    def __init__(self, model=None, significance=0.05, tau_s=0.05, gamma=0.5,
                 skip_mode="linear", window=8, token_reduction_enabled=True,
                 block_cache_enabled=True, blend_enabled=True, ridge=1e-6):
        self.model = model
        self.significance = significance
        self.tau_s = tau_s
        self.gamma = gamma
        self.skip_mode = skip_mode
        self.window = window
        self.token_reduction_enabled = token_reduction_enabled
        self.block_cache_enabled = block_cache_enabled
        self.blend_enabled = blend_enabled
        self.ridge = ridge

    def engine_config(self) -> EngineConfig:
        return EngineConfig(
            significance=self.significance,
            tau_s=self.tau_s,
            gamma=self.gamma,
            skip_mode=self.skip_mode,
            window=self.window,
            token_reduction_enabled=self.token_reduction_enabled,
            block_cache_enabled=self.block_cache_enabled,
            blend_enabled=self.blend_enabled,
        )

    @staticmethod
    def _as_traces(X):
        if X is None:
            return []
        if isinstance(X, Trace):
            return [X]
        return [t for t in X if isinstance(t, Trace)]

    def fit(self, X=None, y=None):
        traces = [t for t in self._as_traces(X) if t.has_layer_pairs]
        if traces:
            fit = fit_approximators(traces, ridge=self.ridge)
            self.approximators_ = list(fit.approximators)
            self.calibration_ = fit
        else:
            warnings.warn("no calibration pairs available; using identity approximators")
            self.approximators_ = None
            self.calibration_ = None
        return self

    def transform(self, X):
        if self.model is None:
            raise ValueError("model must be set before transform")
        inputs = X.inputs if isinstance(X, Trace) else list(X)
        approx = getattr(self, "approximators_", None)
        self.report_ = run_generation(self.model, inputs, self.engine_config(), approx)
        return np.stack(self.report_.outputs)

    def fit_transform(self, X, y=None):
        return self.fit(X, y).transform(X)
