"""Command-line entry points.

Subcommands: gen-trace (record a full-compute trace for a seeded schedule),
calibrate (fit per-layer affine approximators from a trace), bench (full vs
fixed-interval vs gated cache over a trace, with the module ablation grid),
and verify (invariant suites). Every subcommand is deterministic given its
flags and seed, wall-clock fields aside.

Exit codes: 0 success, 2 bad flags, 3 invariant violation, 4 I/O or format
error.
"""

from __future__ import annotations

import argparse
import sys

from .approx import fit_approximators, load_approximators, save_approximators
from .bench import parse_ablate, peak_memory_mb, results_to_json, run_bench, write_bench_csv
from .engine import record_full_trace
from .model import Schedule, ToyModel, make_schedule
from .traceio import TraceCorruptionError, TraceFormatError, read_trace, write_trace
from .verify import FAULTS, SUITE_NAMES, report_json, run_suites

__all__ = ["build_parser", "main"]

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INVARIANT = 3
EXIT_IO = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fastcache",
        description="Record, calibrate, benchmark, and verify the cached generation engine.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-trace", help="record a full-compute trace for a seeded schedule")
    gen.add_argument("--layers", type=int, default=12)
    gen.add_argument("--dim", type=int, default=128)
    gen.add_argument("--heads", type=int, default=4)
    gen.add_argument("--tokens", type=int, default=64)
    gen.add_argument("--steps", type=int, default=50)
    gen.add_argument("--schedule", default="static",
                     choices=("static", "low_motion", "high_motion", "decaying"))
    gen.add_argument("--noise-scale", type=float, default=0.1)
    gen.add_argument("--motion-fraction", type=float, default=0.25)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_gen_trace)

    cal = sub.add_parser("calibrate", help="fit per-layer affine approximators from a trace")
    cal.add_argument("--trace", required=True)
    cal.add_argument("--ridge", type=float, default=1e-6)
    cal.add_argument("--out", required=True)
    cal.set_defaults(func=cmd_calibrate)

    ben = sub.add_parser("bench", help="compare full, fixed-interval, and cached runs over a trace")
    ben.add_argument("--trace", required=True)
    ben.add_argument("--approx", default=None,
                     help="calibrated approximator container (default: identity)")
    ben.add_argument("--alpha", type=float, default=0.05)
    ben.add_argument("--tau-s", type=float, default=0.05)
    ben.add_argument("--gamma", type=float, default=0.5)
    ben.add_argument("--skip-mode", default="linear", choices=("linear", "reuse"))
    ben.add_argument("--window", type=int, default=8)
    ben.add_argument("--every-k", type=int, default=2,
                     help="period of the fixed-interval reuse baseline")
    ben.add_argument("--ablate", default="STR,SC,MB",
                     help="'none', 'grid', or comma list of STR,SC,MB toggles to enable")
    ben.add_argument("--out", required=True, help="result CSV path")
    ben.add_argument("--json", default=None, help="optional JSON summary path")
    ben.set_defaults(func=cmd_bench)

    ver = sub.add_parser("verify", help="run the invariant suites")
    ver.add_argument("--suite", default="all", choices=SUITE_NAMES + ("all",))
    ver.add_argument("--inject-fault", default=None, choices=FAULTS,
                     help="perturb the gate threshold so the checker must fail (self-test)")
    ver.add_argument("--out", default=None, help="optional JSON report path")
    ver.set_defaults(func=cmd_verify)

    return parser


def cmd_gen_trace(args) -> int:
    sched = Schedule(args.schedule, args.steps, args.tokens, args.dim,
                     noise_scale=args.noise_scale, motion_fraction=args.motion_fraction)
    model = ToyModel.build(args.layers, args.dim, args.heads, args.seed)
    inputs = make_schedule(sched, seed=args.seed)
    trace = record_full_trace(model, inputs, schedule_desc=sched.descriptor(),
                              seed=args.seed)
    n_bytes = write_trace(trace, args.out)
    print(f"wrote {args.out}: {n_bytes} bytes, schedule={sched.kind} "
          f"T={sched.timesteps} L={args.layers} N={sched.n_tokens} D={sched.dim}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    trace = read_trace(args.trace)
    if not trace.has_layer_pairs:
        raise TraceFormatError(
            "trace lacks per-layer pairs; calibration needs a gen-trace recording"
        )
    fit = fit_approximators([trace], ridge=args.ridge)
    save_approximators(fit, args.out, ridge=args.ridge)
    print(f"fitted {len(fit.approximators)} approximators from {fit.n_pairs} pairs/layer")
    print(f"{'layer':>5}  {'holdout':>12}  {'identity':>12}  better")
    for l, (h, i) in enumerate(zip(fit.holdout_error, fit.identity_error)):
        print(f"{l:>5}  {h:>12.6e}  {i:>12.6e}  {'yes' if h < i else 'no'}")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    trace = read_trace(args.trace)
    desc = trace.header.get("model")
    if not isinstance(desc, dict):
        raise TraceFormatError("trace header lacks a model descriptor; re-record with gen-trace")
    model = ToyModel.from_descriptor(desc)

    approximators = None
    if args.approx:
        fit = load_approximators(args.approx)
        if len(fit.approximators) != model.n_layers:
            raise TraceFormatError(
                f"approximator container has {len(fit.approximators)} layers, model has {model.n_layers}"
            )
        approximators = fit.approximators

    configs = parse_ablate(args.ablate)
    results = run_bench(
        model, trace.inputs, configs,
        significance=args.alpha, tau_s=args.tau_s, gamma=args.gamma,
        skip_mode=args.skip_mode, window=args.window,
        approximators=approximators, every_k=args.every_k,
    )
    write_bench_csv(results, args.out)
    if args.json:
        with open(args.json, "w") as fh:
            fh.write(results_to_json(results, extra={"trace": args.trace}))

    print(f"{'method':>12} {'config':>12} {'wall_ms':>10} {'skip_rate':>9} "
          f"{'deviation':>11} {'violations':>10}")
    for r in results:
        print(f"{r.method:>12} {r.config:>12} {r.wall_ms:>10.2f} {r.skip_rate:>9.3f} "
              f"{r.deviation:>11.3e} {r.bound_violations:>10}")
    print(f"peak memory: {peak_memory_mb():.1f} MB")
    print(f"wrote {args.out}")

    violations = sum(r.bound_violations for r in results)
    if violations:
        print(f"error: {violations} skipped decisions exceeded the error bound",
              file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def cmd_verify(args) -> int:
    results = run_suites(args.suite, fault=args.inject_fault)
    for r in results:
        flag = "PASS" if r.passed else "FAIL"
        print(f"{flag} {r.suite}.{r.name}  margin={r.margin:+.3e}  {r.detail}")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(report_json(results))
        print(f"wrote {args.out}")
    failed = [r for r in results if not r.passed]
    if failed:
        names = ", ".join(f"{r.suite}.{r.name}" for r in failed)
        print(f"invariant violation: {names}", file=sys.stderr)
        return EXIT_INVARIANT
    print(f"all {len(results)} invariants hold")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (TraceFormatError, TraceCorruptionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
