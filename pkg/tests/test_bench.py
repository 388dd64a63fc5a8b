import csv
import io

import numpy as np
import pytest

from oblivbench import bench
from oblivbench.apps.kmeans import read_centroids
from oblivbench.bench import (CSV_HEADER, NotInvariant, Scenario, UsageError, check_oblivious,
                              check_traces, emit_csv, run_scenario)
from oblivbench.cli import main
from oblivbench.oalg import comparator_count
from oblivbench.trace import AccessTrace, InstrumentedBuffer, recording_enabled


def branching_sort(data):
    """Bubble sort that only writes when it swaps: leaks the data order."""
    buf = InstrumentedBuffer(data)
    n = len(buf)
    for i in range(n):
        for j in range(n - 1 - i):
            a, b = buf.read(j), buf.read(j + 1)
            if a > b:
                buf.write(j, b)
                buf.write(j + 1, a)


def test_checker_catches_branching_sort():
    rep = check_traces(lambda rs: rs.integers(0, 100, 16, dtype=np.uint64), branching_sort,
                       pairs=5, seed=1, kind="Sort", impl="Buggy", shape=(16,))
    assert not rep.passed
    bad = [p for p in rep.pairs if not p.equal]
    assert bad and all(p.divergence is not None for p in bad)
    assert any("DIVERGES at event" in line for line in rep.lines())
    a, b = rep.first_traces
    assert a.codes[bad[0].divergence] != b.codes[bad[0].divergence] or len(a) != len(b)


@pytest.mark.parametrize("kind,shape", [("ArrayAccess", (50,)), ("Sort", (64,)),
                                        ("BlockAccess", (4,)), ("EditDistance", (30, 30))])
def test_check_oblivious_passes(kind, shape):
    rep = check_oblivious(kind, shape, pairs=4)
    assert rep.passed and rep.identical == 4
    assert all(p.events[0] > 0 for p in rep.pairs)


@pytest.mark.parametrize("kind,impl", [("KMeans", "OramHash"), ("Sort", "Unprotected"),
                                       ("Branching", "Manual"), ("ArrayAccess", "Oram")])
def test_check_oblivious_refusals(kind, impl):
    with pytest.raises(NotInvariant):
        check_oblivious(kind, (10, 2), impl=impl)


def test_check_oblivious_usage_errors():
    with pytest.raises(UsageError):
        check_oblivious("Nope", (1,))
    with pytest.raises(UsageError):
        check_oblivious("EditDistance", (30,))
    with pytest.raises(UsageError):
        check_oblivious("Sort", (8,), pairs=0)


def test_scenario_validation():
    for bad in [Scenario("Sort", "Manual", 8, reps=2), Scenario("Sort", "Linear", 8),
                Scenario("Nope", "Manual", 8), Scenario("Sort", "Manual", 0),
                Scenario("Sort", "Manual", 8, record_bytes=4),
                Scenario("Branching", "Manual", 8, bit_fraction=1.5)]:
        with pytest.raises(UsageError):
            bad.validate()


SMALL = [("ArrayAccess", "Unprotected", 100), ("ArrayAccess", "Linear", 100),
         ("ArrayAccess", "Oram", 100), ("Branching", "Unprotected", 1000),
         ("Branching", "Manual", 1000), ("Sort", "Unprotected", 64), ("Sort", "Manual", 64),
         ("BlockAccess", "Unprotected", 8), ("BlockAccess", "Linear", 8),
         ("BlockAccess", "Oram", 8), ("BlockSort", "Unprotected", 8),
         ("BlockSort", "Manual", 8), ("EditDistance", "Unprotected", 20),
         ("EditDistance", "Manual", 20), ("FloydWarshall", "Unprotected", 8),
         ("FloydWarshall", "Manual", 8), ("WordCount", "Unprotected", 4),
         ("WordCount", "Manual", 4), ("WordCount", "Framework", 4)] + \
        [("KMeans", impl, 4) for impl in ("Unprotected", "ManualCMOV", "OramHash", "Framework")]


@pytest.mark.parametrize("kind,impl,n", SMALL)
def test_every_scenario_runs(kind, impl, n):
    m = run_scenario(Scenario(kind, impl, n, reps=3, iters=2 if kind == "KMeans" else None))
    assert 0 <= m.min_ms <= m.median_ms <= m.max_ms
    assert len(m.samples_ms) == 3
    assert recording_enabled()


def test_sort_reports_comparators():
    m = run_scenario(Scenario("Sort", "Manual", 256, reps=3))
    assert m.aux_count == 4608


def test_csv_shape_and_empty_aux(tmp_path):
    ms = [run_scenario(Scenario("Sort", "Unprotected", 16, reps=3))]
    p = tmp_path / "out.csv"
    emit_csv(ms, p)
    lines = p.read_text().splitlines()
    assert len(lines) == 2
    assert lines[0] == ",".join(CSV_HEADER)
    row = next(csv.DictReader(io.StringIO(p.read_text())))
    assert row["aux_count"] == "" and row["kind"] == "Sort" and row["reps"] == "3"


def test_csv_aux_deterministic():
    def aux():
        buf = io.StringIO()
        emit_csv([run_scenario(Scenario("WordCount", "Manual", 4, reps=3, seed=7))], buf)
        rows = list(csv.reader(io.StringIO(buf.getvalue())))
        return [r[:5] + r[8:] for r in rows]
    assert aux() == aux()


def test_kmeans_scenario_writes_centroids(tmp_path):
    p = tmp_path / "c.bin"
    run_scenario(Scenario("KMeans", "Unprotected", 3, reps=3, k=4, iters=2,
                          centroids_path=str(p)))
    assert len(read_centroids(p)) == 4


# -- CLI ----------------------------------------------------------------------

def test_cli_run_to_stdout(capsys):
    assert main(["run", "--kind", "Sort", "--impl", "Manual", "--n", "256", "--reps", "3"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == ",".join(CSV_HEADER)
    assert out[1].startswith("Sort,Manual,256,8,3,") and out[1].endswith(",4608")


def test_cli_usage_errors(capsys):
    assert main(["run", "--kind", "Sort", "--impl", "Oram", "--n", "8"]) == 2
    assert main(["run", "--kind", "Sort", "--impl", "Manual", "--n", "8", "--reps", "1"]) == 2
    assert main(["run", "--kind", "Bogus", "--impl", "Manual", "--n", "8"]) == 2
    assert main(["run", "--kind", "Sort", "--impl", "Manual"]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["check-oblivious", "--kind", "KMeans", "--impl", "OramHash",
                 "--shape", "100,5"]) == 2
    assert "miss-report" in capsys.readouterr().err


def test_cli_unwritable_csv(tmp_path):
    bad = tmp_path / "missing" / "x.csv"
    assert main(["run", "--kind", "Sort", "--impl", "Unprotected", "--n", "8", "--reps", "3",
                 "--csv", str(bad)]) == 1


def test_cli_check_and_dump(tmp_path, capsys):
    dump = tmp_path / "t.txt"
    assert main(["check-oblivious", "--kind", "Sort", "--shape", "64", "--pairs", "3",
                 "--dump", str(dump)]) == 0
    assert "3/3 identical" in capsys.readouterr().out
    with open(dump) as fh:
        a = AccessTrace.load(fh)
    with open(str(dump) + ".other") as fh:
        b = AccessTrace.load(fh)
    assert len(a) == 4 * comparator_count(64)
    assert a == b


def test_cli_failed_check_exits_one(monkeypatch, capsys):
    def fake(kind, shape, pairs, seed, impl):
        return check_traces(lambda rs: rs.integers(0, 9, 8, dtype=np.uint64), branching_sort,
                            3, seed, kind, "Manual", shape)
    monkeypatch.setattr(bench, "check_oblivious", fake)
    assert main(["check-oblivious", "--kind", "Sort", "--shape", "8"]) == 1
    assert "DIVERGES" in capsys.readouterr().out


def test_cli_miss_report(capsys):
    assert main(["check-oblivious", "--kind", "KMeans", "--impl", "OramHash", "--shape", "200,5",
                 "--pairs", "3", "--miss-report"]) == 0
    assert "distinct_miss_sequences" in capsys.readouterr().out


@pytest.mark.parametrize("kind", ["WordCount", "KMeans", "BlockSort"])
def test_cli_gen_then_run(kind, tmp_path, capsys):
    f = tmp_path / "in.blk"
    assert main(["gen", "--kind", kind, "--blocks", "4", "--out", str(f)]) == 0
    assert f.stat().st_size == 4 * 1024
    impl = {"WordCount": "Framework", "KMeans": "OramHash", "BlockSort": "Manual"}[kind]
    args = ["run", "--kind", kind, "--impl", impl, "--input", str(f), "--reps", "3"]
    if kind == "KMeans":
        args += ["--iters", "2", "--centroids", str(tmp_path / "c.bin")]
    assert main(args) == 0
    assert capsys.readouterr().out.splitlines()[1].startswith(f"{kind},{impl},4,")


def test_cli_gen_from_text(tmp_path):
    txt = tmp_path / "t.txt"
    txt.write_text("the cat the hat " * 40)
    out = tmp_path / "w.blk"
    assert main(["gen", "--kind", "WordCount", "--blocks", "1", "--text", str(txt),
                 "--out", str(out)]) == 0
    assert out.stat().st_size == 3 * 1024


def test_cli_missing_input_file(tmp_path):
    assert main(["run", "--kind", "BlockSort", "--impl", "Manual", "--reps", "3",
                 "--input", str(tmp_path / "nope")]) == 1


def test_branching_bits_follow_fraction():
    for f in (0.0, 1.0):
        assert bench.secret_bits(1000, f, 1).mean() == f
