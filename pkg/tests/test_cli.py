import csv
import json
import subprocess
import sys

import pytest

from fastcache.approx import load_approximators
from fastcache.cli import main
from fastcache.engine import record_full_trace
from fastcache.model import Schedule, ToyModel, make_schedule
from fastcache.traceio import read_trace, write_trace

GEN_SMALL = ["gen-trace", "--layers", "3", "--dim", "8", "--heads", "2",
             "--tokens", "6", "--steps", "8", "--schedule", "decaying",
             "--seed", "5"]


def gen_trace(tmp_path, name="t.bin", extra=()):
    out = tmp_path / name
    assert main(GEN_SMALL + list(extra) + ["--out", out.as_posix()]) == 0
    return out


def test_gen_trace_is_bit_reproducible(tmp_path, capsys):
    a = gen_trace(tmp_path, "a.bin")
    b = gen_trace(tmp_path, "b.bin")
    assert a.read_bytes() == b.read_bytes()
    assert "wrote" in capsys.readouterr().out


def test_gen_trace_header_reflects_flags(tmp_path):
    path = gen_trace(tmp_path)
    trace = read_trace(path.as_posix())
    assert trace.header["layers"] == 3
    assert trace.header["seed"] == 5
    assert trace.header["schedule"]["kind"] == "decaying"
    assert trace.header["schedule"]["timesteps"] == 8
    assert trace.header["model"] == {"layers": 3, "dim": 8, "heads": 2, "seed": 5}
    assert len(trace.frames) == 8


def test_gen_trace_seed_changes_payload(tmp_path):
    a = gen_trace(tmp_path, "a.bin")
    out = tmp_path / "c.bin"
    args = [x if x != "5" else "6" for x in GEN_SMALL]
    assert main(args + ["--out", out.as_posix()]) == 0
    assert a.read_bytes() != out.read_bytes()


def test_calibrate_flow(tmp_path, capsys):
    trace = gen_trace(tmp_path)
    out = tmp_path / "approx.bin"
    assert main(["calibrate", "--trace", trace.as_posix(),
                 "--out", out.as_posix()]) == 0
    text = capsys.readouterr().out
    assert "fitted 3 approximators" in text
    fit = load_approximators(out.as_posix())
    assert len(fit.approximators) == 3
    assert all(h <= i for h, i in zip(fit.holdout_error, fit.identity_error))


def test_calibrate_rejects_traces_without_pairs(tmp_path, capsys):
    model = ToyModel.build(2, 8, 2, seed=0)
    inputs = make_schedule(Schedule("static", 3, 4, 8), seed=0)
    bare = record_full_trace(model, inputs, with_pairs=False)
    path = tmp_path / "bare.bin"
    write_trace(bare, path.as_posix())
    code = main(["calibrate", "--trace", path.as_posix(),
                 "--out", (tmp_path / "x.bin").as_posix()])
    assert code == 4
    assert "pairs" in capsys.readouterr().err


def test_bench_none_ablation_matches_reference_exactly(tmp_path):
    trace = gen_trace(tmp_path)
    out = tmp_path / "bench.csv"
    jpath = tmp_path / "bench.json"
    code = main(["bench", "--trace", trace.as_posix(), "--ablate", "none",
                 "--out", out.as_posix(), "--json", jpath.as_posix()])
    assert code == 0
    rows = list(csv.DictReader(out.open()))
    assert [r["method"] for r in rows] == ["full", "interval2", "fastcache"]
    none_row = rows[2]
    assert none_row["config"] == "none"
    assert float(none_row["deviation"]) == 0.0
    assert float(none_row["skip_rate"]) == 0.0
    blob = json.loads(jpath.read_text())
    assert blob["trace"] == trace.as_posix()
    assert len(blob["results"]) == 3


def test_bench_grid_row_count_and_exit(tmp_path, capsys):
    trace = gen_trace(tmp_path)
    out = tmp_path / "grid.csv"
    assert main(["bench", "--trace", trace.as_posix(), "--ablate", "grid",
                 "--out", out.as_posix()]) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 7
    assert sum(int(r["bound_violations"]) for r in rows) == 0
    text = capsys.readouterr().out
    assert "peak memory" in text


def test_bench_with_calibrated_approximators(tmp_path):
    trace = gen_trace(tmp_path)
    approx = tmp_path / "approx.bin"
    assert main(["calibrate", "--trace", trace.as_posix(),
                 "--out", approx.as_posix()]) == 0
    out = tmp_path / "bench.csv"
    assert main(["bench", "--trace", trace.as_posix(), "--approx", approx.as_posix(),
                 "--ablate", "SC", "--out", out.as_posix()]) == 0
    rows = list(csv.DictReader(out.open()))
    assert rows[2]["config"] == "SC"


def test_bench_rejects_layer_mismatched_approximators(tmp_path, capsys):
    trace = gen_trace(tmp_path)
    other = tmp_path / "two_layer.bin"
    assert main(["gen-trace", "--layers", "2", "--dim", "8", "--heads", "2",
                 "--tokens", "6", "--steps", "4", "--out", other.as_posix()]) == 0
    approx = tmp_path / "approx2.bin"
    assert main(["calibrate", "--trace", other.as_posix(),
                 "--out", approx.as_posix()]) == 0
    code = main(["bench", "--trace", trace.as_posix(), "--approx", approx.as_posix(),
                 "--out", (tmp_path / "b.csv").as_posix()])
    assert code == 4
    assert "layers" in capsys.readouterr().err


def test_missing_trace_is_io_error(tmp_path, capsys):
    code = main(["bench", "--trace", (tmp_path / "nope.bin").as_posix(),
                 "--out", (tmp_path / "b.csv").as_posix()])
    assert code == 4
    assert "error:" in capsys.readouterr().err


def test_corrupt_trace_is_io_error(tmp_path, capsys):
    bad = tmp_path / "junk.bin"
    bad.write_bytes(b"not a trace at all")
    code = main(["calibrate", "--trace", bad.as_posix(),
                 "--out", (tmp_path / "x.bin").as_posix()])
    assert code == 4


def test_bad_parameter_is_usage_error(tmp_path, capsys):
    trace = gen_trace(tmp_path)
    code = main(["bench", "--trace", trace.as_posix(), "--alpha", "2.0",
                 "--out", (tmp_path / "b.csv").as_posix()])
    assert code == 2
    assert "error:" in capsys.readouterr().err
    code = main(["bench", "--trace", trace.as_posix(), "--ablate", "BOGUS",
                 "--out", (tmp_path / "b.csv").as_posix()])
    assert code == 2


def test_unknown_choice_exits_via_argparse(tmp_path):
    with pytest.raises(SystemExit) as err:
        main(GEN_SMALL[:1] + ["--schedule", "sideways", "--out", "x.bin"])
    assert err.value.code == 2


def test_verify_stats_suite_passes(tmp_path, capsys):
    out = tmp_path / "report.json"
    assert main(["verify", "--suite", "stats", "--out", out.as_posix()]) == 0
    text = capsys.readouterr().out
    assert "PASS stats." in text
    assert "FAIL" not in text
    blob = json.loads(out.read_text())
    assert blob["passed"] is True
    assert all(entry["passed"] for entry in blob["invariants"])


def test_verify_injected_fault_is_caught(capsys):
    code = main(["verify", "--suite", "stats", "--inject-fault", "threshold"])
    assert code == 3
    captured = capsys.readouterr()
    assert "FAIL stats." in captured.out
    assert "invariant violation" in captured.err


def test_verify_all_suites(capsys):
    assert main(["verify", "--suite", "all"]) == 0
    text = capsys.readouterr().out
    assert "invariants hold" in text
    for suite in ("stats", "bounds", "interp"):
        assert f"PASS {suite}." in text


def test_console_script_help():
    proc = subprocess.run([sys.executable, "-m", "fastcache.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    for sub in ("gen-trace", "calibrate", "bench", "verify"):
        assert sub in proc.stdout
