import csv
import json

import numpy as np
import pytest

from asynclab.cli import main
from asynclab.scenarios import builtin_example


@pytest.fixture
def ex_file(tmp_path):
    def write(n, **overrides):
        doc, _ = builtin_example(n)
        doc.update(overrides)
        path = tmp_path / f"ex{n}.json"
        path.write_text(json.dumps(doc))
        return str(path)
    return write


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, out


def test_design_golden(ex_file, capsys):
    code, out = run_cli(capsys, "design", ex_file(1))
    assert code == 0
    report = json.loads(out)
    assert np.asarray(report["K"]).ravel() == pytest.approx(
        [0.5626, 1.0633], abs=1e-3)
    assert report["residual"] < 1e-10


def test_design_scalar_integrator(tmp_path, capsys):
    path = tmp_path / "scalar.json"
    path.write_text(json.dumps({
        "model": {"A": [[0.0]], "B": [[1.0]]},
        "design": {"lambda": 1.0, "mu": 1.0}}))
    code, out = run_cli(capsys, "design", str(path))
    assert code == 0
    assert json.loads(out)["K"] == [[pytest.approx(1.0)]]


def test_design_unstabilizable_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({
        "model": {"A": [[1.0]], "B": [[0.0]]},
        "design": {"lambda": 1.0, "mu": 1.0}}))
    code, out = run_cli(capsys, "design", str(path))
    assert code == 2
    assert "error" in json.loads(out)


def test_bound_theorem3_golden(ex_file, capsys):
    code, out = run_cli(capsys, "bound", ex_file(2), "--theorem", "3")
    assert code == 0
    report = json.loads(out)
    assert report["budget"] == pytest.approx(0.0691, abs=1e-3)


def test_bound_corollary1_golden(ex_file, capsys):
    code, out = run_cli(capsys, "bound", ex_file(1), "--theorem", "c1")
    assert code == 0
    assert json.loads(out)["budget"] == pytest.approx(0.017, abs=2e-3)


def test_bound_theorem4_golden(ex_file, capsys):
    code, out = run_cli(capsys, "bound", ex_file(3), "--theorem", "4")
    assert code == 0
    report = json.loads(out)
    assert report["error_bound"] == pytest.approx(0.4535, abs=1e-2)
    assert report["delta_h"] == pytest.approx(0.2894, abs=1e-3)


def test_bound_theorem1_query_route(tmp_path, capsys):
    path = tmp_path / "q.json"
    path.write_text(json.dumps({
        "query": {"mu": 1.0, "eps": 1.0, "omega": 0.01,
                  "sigma_G": 1.0, "sigma_K": 1.0}}))
    code, out = run_cli(capsys, "bound", str(path), "--theorem", "1")
    assert code == 0
    assert json.loads(out)["feasible"]


def test_bound_infeasible_exits_3(tmp_path, capsys):
    path = tmp_path / "q.json"
    path.write_text(json.dumps({
        "query": {"mu": 1.0, "eps": 2.0, "omega": 0.9,
                  "sigma_G": 1.0, "sigma_K": 1.0}}))
    code, out = run_cli(capsys, "bound", str(path), "--theorem", "1")
    assert code == 3
    assert not json.loads(out)["feasible"]


def test_bound_invalid_input_exits_2(tmp_path, capsys):
    path = tmp_path / "q.json"
    path.write_text(json.dumps({"query": {"mu": 1.0}}))
    code, _ = run_cli(capsys, "bound", str(path), "--theorem", "1")
    assert code == 2


def test_run_writes_traces(ex_file, tmp_path, capsys):
    out_dir = tmp_path / "out"
    code, out = run_cli(capsys, "run", ex_file(2, horizon=5.0),
                        "--out", str(out_dir))
    assert code == 0
    report = json.loads(out)
    assert not report["warnings"]
    with open(out_dir / "trace.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["t", "x_1_1", "x_2_1", "x_3_1", "x_4_1", "x_5_1",
                       "delta_sq"]
    assert float(rows[1][0]) == 0.0
    events = json.loads((out_dir / "events.json").read_text())
    assert {e["kind"] for e in events} >= {"sample", "deliver"}
    assert (out_dir / "report.json").exists()


def test_run_csv_has_v_column_in_edge_mode(ex_file, tmp_path, capsys):
    out_dir = tmp_path / "out1"
    code, _ = run_cli(capsys, "run", ex_file(1, horizon=1.0),
                      "--out", str(out_dir))
    assert code == 0
    with open(out_dir / "trace.csv") as f:
        header = next(csv.reader(f))
    assert header[-1] == "V"
    assert header[:2] == ["t", "x_1_1"]


def test_run_zero_horizon(ex_file, tmp_path, capsys):
    out_dir = tmp_path / "out0"
    code, out = run_cli(capsys, "run", ex_file(2, horizon=0.0),
                        "--out", str(out_dir))
    assert code == 0
    with open(out_dir / "trace.csv") as f:
        rows = list(csv.reader(f))
    assert len(rows) == 2        # header plus the t = 0 snapshot


def test_run_oversized_h_warns(ex_file, tmp_path, capsys):
    # 10x the certified budget: the run completes with a warning.
    out_dir = tmp_path / "out_big"
    code, out = run_cli(capsys, "run",
                        ex_file(2, horizon=2.0,
                                schedule={"h_min": 0.3, "h_max": 0.7,
                                          "tau_max": 0.0}),
                        "--out", str(out_dir))
    assert code == 0
    report = json.loads(out)
    assert any("budget exceeded" in w for w in report["warnings"])


def test_run_schema_error_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"mode": "broadcast"}))
    code, _ = run_cli(capsys, "run", str(path), "--out", str(tmp_path / "o"))
    assert code == 2


def test_run_runtime_error_exits_4(ex_file, tmp_path, capsys):
    # Explicit schedules violating Assumption 1 fail at runtime.
    doc, _ = builtin_example(2)
    del doc["schedule"]
    doc["schedules"] = [{"channel_id": ch,
                         "sample_instants": [0.1, 0.1],
                         "delays": [0.0, 0.0]} for ch in range(5)]
    path = tmp_path / "badsched.json"
    path.write_text(json.dumps(doc))
    code, _ = run_cli(capsys, "run", str(path), "--out", str(tmp_path / "o"))
    assert code == 4


def test_reproduce_examples_pass(capsys, ex_file, monkeypatch):
    for n in ("2", "3"):
        code, out = run_cli(capsys, "reproduce", "--example", n)
        assert code == 0
        assert "FAIL" not in out


def test_reproduce_bad_example(capsys):
    with pytest.raises(SystemExit):
        main(["reproduce", "--example", "9"])


def test_sweep_parallel_runs(ex_file, tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("ASYNC_LAB_THREADS", "2")
    out_dir = tmp_path / "sweep"
    code, out = run_cli(capsys, "run",
                        ex_file(2, horizon=3.0, sweep={"seeds": [1, 2, 3]}),
                        "--out", str(out_dir))
    assert code == 0
    report = json.loads(out)
    assert [r["seed"] for r in report["runs"]] == [1, 2, 3]
    assert (out_dir / "trace_seed2.csv").exists()
