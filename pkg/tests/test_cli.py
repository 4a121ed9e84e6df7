import csv
import json
import subprocess
import sys

import pytest

from shelfreduce import io
from shelfreduce.cli import main
from shelfreduce.scene import Book, BookPose, ShelfInstance

SMALL = {"kick_off": 12, "min_pts": 3, "d_c": 14, "epochs": 15, "hidden": 16, "rf_trees": 10, "holdout": 4}


@pytest.fixture(scope="module")
def instances(tmp_path_factory):
    path = tmp_path_factory.mktemp("inst") / "inst.jsonl"
    assert main(["generate", "--count", "3", "--seed", "5", "--out", str(path)]) == 0
    return path


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    cfg = d / "cfg.json"
    cfg.write_text(json.dumps(SMALL))
    for stage in ("kickoff", "cluster", "train-classifier", "expand", "train-strategy"):
        assert main([stage, "--run", str(d), "--config", str(cfg)]) == 0, stage
    return d


def test_generate(instances):
    rows = io.read_jsonl(instances)
    assert len(rows) == 3


def test_solve_micp_full(instances, tmp_path, capsys):
    out = tmp_path / "sol.json"
    spec = tmp_path / "spec.jsonl"
    assert main(["solve", str(instances), "--mode", "micp-full", "--out", str(out), "--dump-spec", str(spec)]) == 0
    assert "mode=micp-full" in capsys.readouterr().out
    sol = io.read_json(out)
    assert sol["kind"] == "solution" and len(sol["poses"]) == 3
    kinds = {r["kind"] for r in io.read_jsonl(spec)}
    assert {"variable", "linear", "objective"} <= kinds


def test_solve_minlp_desk_is_valid(instances, tmp_path):
    from shelfreduce.scene import validate_solution
    out = tmp_path / "sol.json"
    assert main(["solve", str(instances), "--index", "1", "--mode", "minlp-desk", "--out", str(out)]) == 0
    inst = io.instance_from_dict(io.read_jsonl(instances)[1])
    sol = io.solution_from_dict(io.read_json(out), inst.books)
    assert validate_solution(inst, sol, tol=1e-5).ok


def test_strategy_mode_needs_model(instances, capsys):
    assert main(["solve", str(instances), "--mode", "strategy"]) == 1
    assert "model" in capsys.readouterr().err


def test_strategy_mode_with_model(instances, run_dir, capsys):
    assert main(["solve", str(instances), "--mode", "strategy", "--model-in", str(run_dir)]) == 0
    assert "mode=strategy" in capsys.readouterr().out


def test_infeasible_exit_code(tmp_path):
    b, ins = Book(40, 150), Book(160, 160)
    inst = ShelfInstance(100.0, 220.0, ((b, BookPose.from_angle(b, 20, 75, 0.0)),), ins)
    p = tmp_path / "x.json"
    io.write_json(p, io.instance_to_dict(inst))
    assert main(["solve", str(p), "--time-limit", "60"]) == 2


def test_limit_exit_code(tmp_path):
    b, ins = Book(60, 150), Book(60, 150)
    inst = ShelfInstance(100.0, 220.0, ((b, BookPose.from_angle(b, 40, 75, 0.0)),), ins)
    p = tmp_path / "x.json"
    io.write_json(p, io.instance_to_dict(inst))
    assert main(["solve", str(p), "--node-limit", "3"]) == 3


def test_malformed_instance_message(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"version": 1, "shelf": [1]}')
    assert main(["solve", str(p)]) == 1
    err = capsys.readouterr().err
    assert "bad.json" in err and "Traceback" not in err


def test_missing_stage_input(tmp_path, capsys):
    assert main(["cluster", "--run", str(tmp_path)]) == 1
    assert "kickoff" in capsys.readouterr().err


def test_evaluate_and_report(run_dir, tmp_path, capsys):
    assert main(["evaluate", "--run", str(run_dir), "--top-k", "5"]) == 0
    out = capsys.readouterr().out
    assert "learner" in out and "baseline" in out
    rows = io.read_metrics_csv(run_dir / "metrics.csv")
    # three single-row files merge into a three-row table
    files = []
    for k in range(3):
        f = tmp_path / f"m{k}.csv"
        io.write_metrics_csv(f, [{**rows[0], "cluster": str(2 - k)}])
        files.append(str(f))
    merged = tmp_path / "merged.csv"
    assert main(["report", *files, "--out", str(merged)]) == 0
    with open(merged) as fh:
        got = list(csv.reader(fh))
    assert tuple(got[0]) == ("cluster", "n_total", "unique_frac", "ints", "s_pct", "det", "avg_s", "max_s")
    assert [r[0] for r in got[1:]] == ["0", "1", "2"]


def test_report_needs_files():
    assert main(["report"]) == 1


def test_report_schema_mismatch(tmp_path, capsys):
    f = tmp_path / "odd.csv"
    f.write_text("x,y\n1,2\n")
    assert main(["report", str(f)]) == 1
    assert "odd.csv" in capsys.readouterr().err


def test_usage_error_exit_code():
    res = subprocess.run([sys.executable, "-m", "shelfreduce", "solve"], capture_output=True, text=True)
    assert res.returncode == 1
    assert "Traceback" not in res.stderr


def test_rerun_is_idempotent(instances, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["solve", str(instances), "--out", str(a)]) == 0
    assert main(["solve", str(instances), "--out", str(b)]) == 0
    assert a.read_text() == b.read_text()
