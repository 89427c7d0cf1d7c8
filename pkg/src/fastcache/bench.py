"""Benchmark harness comparing full compute, fixed-interval reuse, and the
gated cache over one recorded trace.

Each run becomes a BenchResult row: wall time, theoretical FLOPs, skip rate,
mean relative Frobenius deviation of the final hidden states from the
full-compute reference, and the bound-violation count (which must stay 0).
The ablation grid reproduces the five on/off patterns of the module toggles
(token reduction, statistical cache, motion-aware blending).

Cells may run in parallel workers, each owning its own engine state; the
worker count is capped by the FASTCACHE_THREADS env var and defaults to 1
so wall-clock numbers are uncontended.
"""

from __future__ import annotations

import csv
import json
import os
import resource
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .engine import EngineConfig, RunReport, run_fixed_interval, run_full, run_generation
from .model import ToyModel
from .stats import ChiSquareTest

__all__ = [
    "ABLATION_FLAGS",
    "ABLATION_GRID",
    "AblationConfig",
    "BenchResult",
    "ablation_grid",
    "parse_ablate",
    "output_deviation",
    "run_bench",
    "write_bench_csv",
    "results_to_json",
    "peak_memory_mb",
    "worker_count",
]

# toggle order: spatial token reduction, statistical cache, motion-aware blending
ABLATION_FLAGS = ("STR", "SC", "MB")

ABLATION_GRID = (
    (False, False, False),
    (True, False, True),
    (False, True, True),
    (True, True, False),
    (True, True, True),
)

BENCH_CSV_FIELDS = (
    "method", "config", "token_reduction", "block_cache", "blend",
    "wall_ms", "flops", "flops_full", "skip_rate", "deviation",
    "bound_violations",
)


@dataclass(frozen=True)
class AblationConfig:
    token_reduction: bool
    block_cache: bool
    blend: bool

    @property
    def label(self) -> str:
        on = [f for f, v in zip(ABLATION_FLAGS, self) if v]
        return "+".join(on) if on else "none"

    def __iter__(self):
        return iter((self.token_reduction, self.block_cache, self.blend))


def ablation_grid() -> list:
    return [AblationConfig(*row) for row in ABLATION_GRID]


def parse_ablate(text: str) -> list:
    """Decode the --ablate flag: "none", "grid", or a comma list of toggles."""
    text = (text or "none").strip()
    if text.lower() == "grid":
        return ablation_grid()
    if text.lower() == "none":
        return [AblationConfig(False, False, False)]
    on = set()
    for tok in text.replace("+", ",").split(","):
        tok = tok.strip().upper()
        if tok not in ABLATION_FLAGS:
            raise ValueError(
                f"unknown ablation toggle {tok!r}; expected one of {ABLATION_FLAGS}, 'grid', or 'none'"
            )
        on.add(tok)
    return [AblationConfig("STR" in on, "SC" in on, "MB" in on)]


def output_deviation(outputs, reference) -> float:
    """Mean over timesteps of relative Frobenius distance to the reference."""
    if len(outputs) != len(reference):
        raise ValueError("output and reference lengths differ")
    if not outputs:
        return 0.0
    devs = []
    for o, r in zip(outputs, reference):
        o = np.asarray(o, dtype=np.float64)
        r = np.asarray(r, dtype=np.float64)
        num = float(np.linalg.norm(o - r))
        den = float(np.linalg.norm(r))
        devs.append(num / den if den > 0.0 else num)
    return float(np.mean(devs))


@dataclass
class BenchResult:
    method: str
    config: str
    token_reduction: bool
    block_cache: bool
    blend: bool
    wall_ms: float
    flops: float          # theoretical FLOPs actually executed
    flops_full: float
    skip_rate: float
    deviation: float      # mean relative Frobenius vs full-compute outputs
    bound_violations: int

    @classmethod
    def from_report(cls, report: RunReport, reference, config="-",
                    flags=(False, False, False)) -> "BenchResult":
        return cls(
            method=report.method,
            config=config,
            token_reduction=bool(flags[0]),
            block_cache=bool(flags[1]),
            blend=bool(flags[2]),
            wall_ms=report.wall_ms,
            flops=report.flops_executed,
            flops_full=report.flops_full,
            skip_rate=report.skip_rate,
            deviation=output_deviation(report.outputs, reference),
            bound_violations=report.bound_violations,
        )

    def row(self) -> list:
        return [
            self.method, self.config,
            int(self.token_reduction), int(self.block_cache), int(self.blend),
            repr(self.wall_ms), repr(self.flops), repr(self.flops_full),
            repr(self.skip_rate), repr(self.deviation), self.bound_violations,
        ]


def worker_count(default=1) -> int:
    raw = os.environ.get("FASTCACHE_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        return default
    return max(1, n)


def peak_memory_mb() -> float:
    # ru_maxrss is kilobytes on Linux
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0


def run_bench(model: ToyModel, inputs, configs, significance=0.05, tau_s=0.05,
              gamma=0.5, skip_mode="linear", window=8, approximators=None,
              every_k=2) -> list:
    """Full reference, then the interval baseline and one cached cell per config.

    Returns BenchResult rows in a stable order: full, intervalK, then the
    requested configs. The reference run always executes first (deviation is
    measured against its outputs); the remaining cells share a worker pool.
    """
    inputs = [np.asarray(x) for x in inputs]
    if inputs and any(c.block_cache for c in configs):
        # warm the quantile cache so no single cell pays the one-time solve
        ChiSquareTest(dof=inputs[0].size, significance=significance)
    full = run_full(model, inputs)
    reference = full.outputs
    results = [BenchResult.from_report(full, reference)]

    def interval_cell():
        return run_fixed_interval(model, inputs, every_k=every_k)

    def cached_cell(cfg: AblationConfig):
        engine_cfg = EngineConfig(
            significance=significance, tau_s=tau_s, gamma=gamma,
            skip_mode=skip_mode, window=window,
            token_reduction_enabled=cfg.token_reduction,
            block_cache_enabled=cfg.block_cache,
            blend_enabled=cfg.blend,
        )
        return run_generation(model, inputs, engine_cfg, approximators)

    workers = worker_count()
    if workers == 1:
        interval = interval_cell()
        cached = [cached_cell(c) for c in configs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            interval_future = pool.submit(interval_cell)
            cached_futures = [pool.submit(cached_cell, c) for c in configs]
            interval = interval_future.result()
            cached = [f.result() for f in cached_futures]

    results.append(BenchResult.from_report(interval, reference))
    for cfg, report in zip(configs, cached):
        results.append(BenchResult.from_report(report, reference, cfg.label, tuple(cfg)))
    return results


def write_bench_csv(results, destination) -> None:
    close = False
    if hasattr(destination, "write"):
        fh = destination
    else:
        fh = open(destination, "w", newline="")
        close = True
    try:
        w = csv.writer(fh)
        w.writerow(BENCH_CSV_FIELDS)
        for r in results:
            w.writerow(r.row())
    finally:
        if close:
            fh.close()


def results_to_json(results, extra=None) -> str:
    body = {
        "results": [
            {
                "method": r.method,
                "config": r.config,
                "token_reduction": r.token_reduction,
                "block_cache": r.block_cache,
                "blend": r.blend,
                "wall_ms": r.wall_ms,
                "flops": r.flops,
                "flops_full": r.flops_full,
                "skip_rate": r.skip_rate,
                "deviation": r.deviation,
                "bound_violations": r.bound_violations,
            }
            for r in results
        ],
        "peak_mem_mb": peak_memory_mb(),
    }
    if extra:
        body.update(extra)
    return json.dumps(body, indent=2, sort_keys=True)
