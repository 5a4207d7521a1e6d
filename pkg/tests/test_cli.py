import csv
import io
import json

import numpy as np
import pytest

from mte_sim import cli
from mte_sim.errors import UsageError
from mte_sim.kernels import PROFILES
from mte_sim.workloads import GemmWorkload

SUITE = """\
gemm name=small M=20 N=24 K=18
conv name=pw minibatch=1 in_channels=6 out_channels=10 in_h=5 in_w=4 kernel_h=1 kernel_w=1
gemm name=half M=9 N=17 K=33 sew_i=16
"""

HEADER = ("name,category,profile,M,N,K,retired_mma,retired_vector,retired_mem,retired_config,"
          "cycles,gflops_equiv,efficiency,verified,reduction")


@pytest.fixture
def suite(tmp_path):
    path = tmp_path / "suite.txt"
    path.write_text(SUITE)
    return str(path)


def run_csv(args, tmp_path):
    out = tmp_path / "out.csv"
    code = cli.main(["run", *args, "--out", str(out)])
    text = out.read_text()
    return code, text, list(csv.DictReader(io.StringIO(text)))


def test_csv_schema_snapshot(suite, tmp_path):
    code, text, rows = run_csv(["--profiles", "MTE32s,Vector1KB", suite], tmp_path)
    assert code == 0
    assert text.splitlines()[0] == HEADER
    assert [(r["name"], r["profile"]) for r in rows] == [
        ("small", "MTE32s"), ("small", "Vector1KB"),
        ("pw", "MTE32s"), ("pw", "Vector1KB"),
        ("half", "MTE32s"), ("half", "Vector1KB"),
    ]
    assert all(r["verified"] == "true" for r in rows)
    assert [r["category"] for r in rows[::2]] == ["I", "I", "I"]
    assert rows[2]["M"] == "20" and rows[2]["N"] == "10" and rows[2]["K"] == "6"
    assert all(float(r["reduction"]) == 1.0 for r in rows if r["profile"] == "Vector1KB")


def test_json_mirrors_csv(suite, tmp_path):
    _, _, rows = run_csv(["--profiles", "MTE8s,SiFiveInt", suite], tmp_path)
    out = tmp_path / "out.json"
    assert cli.main(["run", "--profiles", "MTE8s,SiFiveInt", "--format", "json", "--out", str(out), suite]) == 0
    data = json.loads(out.read_text())
    assert [list(d) for d in data] == [cli.CSV_COLUMNS] * len(rows)
    assert [{k: str(v) for k, v in d.items()} for d in data] == rows


def test_parallel_jobs_preserve_order(suite, tmp_path):
    _, serial, _ = run_csv(["--profiles", "MTE32s,Vector2KB", suite], tmp_path)
    _, parallel, _ = run_csv(["--profiles", "MTE32s,Vector2KB", "--jobs", "2", suite], tmp_path)
    assert serial == parallel


def test_reduction_trend(tmp_path):
    path = tmp_path / "trend.txt"
    path.write_text("gemm name=narrow M=256 N=16 K=256\ngemm name=wide M=256 N=1024 K=256\n")
    _, _, rows = run_csv(["--profiles", "MTE32s", "--verify-limit", "0", str(path)], tmp_path)
    narrow, wide = rows
    assert (narrow["category"], wide["category"]) == ("I", "VI")
    assert float(narrow["reduction"]) >= float(wide["reduction"])
    assert narrow["verified"] == wide["verified"] == "skipped"


def test_empty_suite(tmp_path):
    path = tmp_path / "empty.txt"
    path.write_text("# nothing\n")
    code, text, rows = run_csv(["--profiles", "MTE32s", str(path)], tmp_path)
    assert code == 0 and rows == [] and text.strip() == HEADER


def test_usage_errors(suite, capsys):
    with pytest.raises(UsageError):
        cli.parse_profiles(" , ")
    assert cli.main(["run", "--profiles", "", suite]) == 2
    assert cli.main(["run", "--profiles", "MTE32s,Bogus", suite]) == 2
    assert "error" in capsys.readouterr().err


def test_parse_error_exit(tmp_path, capsys):
    path = tmp_path / "bad.txt"
    path.write_text("gemm name=a M=1 N=1 K=1\ngemm name=b M=1 N=1 Q=1\n")
    assert cli.main(["run", "--profiles", "MTE32s", str(path)]) == 2
    assert "line 2" in capsys.readouterr().err


def test_mismatch_fails_exit(suite, tmp_path, monkeypatch):
    real = cli.oracle.oracle_gemm

    def wrong(*args, **kwargs):
        return real(*args, **kwargs) + np.float32(1)

    monkeypatch.setattr(cli.oracle, "oracle_gemm", wrong)
    code, _, rows = run_csv(["--profiles", "MTE32s", suite], tmp_path)
    assert code == 1
    assert {r["verified"] for r in rows} >= {"false"}


def test_issue_width_override(suite, tmp_path, monkeypatch):
    _, _, base = run_csv(["--profiles", "Vector1KB", suite], tmp_path)
    monkeypatch.setenv("MTE_SIM_ISSUE_WIDTH", "1")
    _, _, narrow = run_csv(["--profiles", "Vector1KB", suite], tmp_path)
    assert all(int(n["cycles"]) > int(b["cycles"]) for n, b in zip(narrow, base))


def test_trace_single_tile(tmp_path):
    out = tmp_path / "t.txt"
    assert cli.main(["trace", "--profile", "MTE32s", "--gemm", "16,16,16", "--out", str(out)]) == 0
    text = out.read_text()
    lines = text.splitlines()
    assert lines[0] == cli.TRACE_MAGIC
    assert any(l.startswith("# profile: MTE32s") for l in lines)
    assert any(l.startswith("# plan: ") for l in lines)
    body = [l for l in lines if not l.startswith("#")]
    assert sum(" tfmul " in l for l in body) == 1
    assert all(len(l.rsplit("csr=", 1)[1]) == 16 for l in body)


def test_trace_deterministic(tmp_path):
    wl = GemmWorkload(40, 40, 40, name="det")
    first = cli.trace_text(wl, "MTE8s", seed=7)
    assert cli.trace_text(wl, "MTE8s", seed=7) == first
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    for path in (a, b):
        cli.main(["trace", "--profile", "MTE32s", "--gemm", "33,20,50", "--seed", "3", "--out", str(path)])
    assert a.read_bytes() == b.read_bytes()


def test_trace_inner_loop_order():
    text = cli.trace_text(GemmWorkload(32, 32, 48, name="loop"), "MTE32s")
    ops = [l.split()[1] for l in text.splitlines() if not l.startswith("#")]
    sequence = [op for op in ops if op in ("tla", "tlb", "tfmul")]
    # 2x2 unrolled block, three K steps: A tiles, then each B tile and its multiplies
    step = ["tla", "tla", "tlb", "tfmul", "tfmul", "tlb", "tfmul", "tfmul"]
    assert sequence == step * 3
    assert ops.count("tssk") == 1


def test_trace_named_workload(tmp_path, suite):
    out = tmp_path / "t.txt"
    assert cli.main(["trace", "--profile", "SiFiveInt", "--workload", "pw", "--suite", suite, "--out", str(out)]) == 0
    assert "name=pw" in out.read_text()
    assert cli.main(["trace", "--profile", "SiFiveInt", "--workload", "nope", "--suite", suite]) == 2


def test_verify_trace(tmp_path, capsys):
    out = tmp_path / "t.txt"
    cli.main(["trace", "--profile", "MTE32v", "--gemm", "20,30,40", "--out", str(out)])
    assert cli.main(["verify", "--trace", str(out)]) == 0
    out.write_text(out.read_text().replace("tfmul", "tfmul ", 1))
    assert cli.main(["verify", "--trace", str(out)]) == 1
    (tmp_path / "junk.txt").write_text("hello\n")
    assert cli.main(["verify", "--trace", str(tmp_path / "junk.txt")]) == 2


def test_verify_random(capsys):
    assert cli.main(["verify", "--profiles", "MTE32s,Vector2KB", "--count", "2"]) == 0
    assert "2/2 bitwise equal" in capsys.readouterr().out


def test_list_profiles(capsys):
    assert cli.main(["list-profiles"]) == 0
    out = capsys.readouterr().out
    assert all(name in out for name in PROFILES)
