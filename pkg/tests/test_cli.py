import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from sparselqr import __version__
from sparselqr.cli import main, parse_range, UsageError
from sparselqr.objective import lqr_gain
from sparselqr.systems import gen_multiagent, load_plant


def run(*argv):
    return main([str(a) for a in argv])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def plant5(tmp_path):
    path = tmp_path / "plant5.json"
    assert run("gen", "--agents", 5, "--out", path) == 0
    return path


def test_gen_records_gain_shape(plant5):
    d = json.loads(plant5.read_text())
    assert d["gain_shape"] == [10, 15]
    manifest = json.loads((plant5.parent / "plant5.json.manifest.json").read_text())
    assert manifest["exit_code"] == 0 and manifest["version"] == __version__
    assert manifest["argv"][:3] == ["gen", "--agents", "5"]


def test_gen_single_agent(tmp_path):
    path = tmp_path / "p1.json"
    assert run("gen", "--agents", 1, "--out", path) == 0
    p = load_plant(path)
    np.testing.assert_array_equal(p.A, gen_multiagent(1).A)


def test_gen_rejects_zero_agents(tmp_path, capsys):
    assert run("gen", "--agents", 0, "--out", tmp_path / "x.json") == 1
    assert "agents" in capsys.readouterr().err


def test_usage_errors_exit_one(tmp_path):
    assert run("solve", "--out", tmp_path / "k.json") == 1  # --plant missing
    assert run("frobnicate") == 1
    assert run("gen", "--agents", 2, "--out", tmp_path / "p.json", "--jobs", 0) == 1


def test_missing_or_bad_input_exits_three(tmp_path, capsys):
    assert run("solve", "--plant", tmp_path / "nope.json", "--out", tmp_path / "k.json") == 3
    bad = tmp_path / "bad.json"
    bad.write_text('{"A": [[1.0]]}')
    assert run("solve", "--plant", bad, "--out", tmp_path / "k.json") == 3
    assert "missing required field" in capsys.readouterr().err


def test_solve_ista_trace_is_monotone(plant5, tmp_path):
    out = tmp_path / "k.json"
    assert run("solve", "--plant", plant5, "--algo", "ista", "--gamma", 1, "--out", out) == 0
    rows = read_csv(tmp_path / "k.trace.csv")
    assert list(rows[0])[:8] == ["iter", "F", "J", "G", "rho", "nnz", "abscissa", "backtracks"]
    F = np.array([float(r["F"]) for r in rows])
    assert np.all(F[1:] <= F[:-1] + 1e-9 * (1 + np.abs(F[:-1])))
    gain = json.loads(out.read_text())
    assert gain["converged"] and gain["algorithm"] == "ista"
    assert gain["nnz"] == np.count_nonzero(gain["K"])


def test_solve_gamma_zero_returns_lqr_gain(plant5, tmp_path):
    out = tmp_path / "k.json"
    assert run("solve", "--plant", plant5, "--gamma", 0, "--out", out) == 0
    K = np.array(json.loads(out.read_text())["K"])
    assert np.linalg.norm(K - lqr_gain(load_plant(plant5))) <= 1e-6


def test_solve_ispa_respects_budget(plant5, tmp_path):
    out = tmp_path / "k.json"
    assert run("solve", "--plant", plant5, "--algo", "ispa", "--ball", "l0", "--radius", 100,
               "--out", out) == 0
    assert json.loads(out.read_text())["nnz"] <= 100


@pytest.mark.parametrize("algo, extra", [("fista", []), ("admm", []),
                                         ("grasp", ["--s", 40])])
def test_solve_other_algorithms(plant5, tmp_path, algo, extra):
    out = tmp_path / f"{algo}.json"
    assert run("solve", "--plant", plant5, "--algo", algo, "--out", out, *extra) == 0
    assert json.loads(out.read_text())["algorithm"] == algo


def test_solve_not_converged_exits_two(plant5, tmp_path):
    out = tmp_path / "k.json"
    assert run("solve", "--plant", plant5, "--max-iter", 2, "--out", out) == 2
    assert json.loads(out.read_text())["status"] == "max_iter_reached"


def test_solve_from_init_file(plant5, tmp_path):
    first = tmp_path / "a.json"
    run("solve", "--plant", plant5, "--gamma", 2, "--out", first)
    second = tmp_path / "b.json"
    assert run("solve", "--plant", plant5, "--gamma", 2, "--init", first, "--out", second) == 0
    a, b = (json.loads(p.read_text()) for p in (first, second))
    assert b["iterations"] <= 2
    assert b["J"] == pytest.approx(a["J"], rel=1e-4)


def test_single_point_sweep_matches_solve(plant5, tmp_path):
    out = tmp_path / "k.json"
    run("solve", "--plant", plant5, "--gamma", 0.5, "--out", out)
    table = tmp_path / "sweep.csv"
    assert run("sweep", "--plant", plant5, "--values", "0.5", "--out", table) == 0
    rows = read_csv(table)
    gain = json.loads(out.read_text())
    assert len(rows) == 1
    assert float(rows[0]["J"]) == gain["J"]
    assert int(rows[0]["nnz"]) == gain["nnz"]
    assert int(rows[0]["iters"]) == gain["iterations"]


def test_sweep_gamma_trend_and_parallel(plant5, tmp_path):
    t1, t2 = tmp_path / "s1.csv", tmp_path / "s2.csv"
    assert run("sweep", "--plant", plant5, "--values", "0.1,1,5", "--out", t1) == 0
    assert run("sweep", "--plant", plant5, "--values", "0.1,1,5", "--out", t2,
               "--jobs", 2) == 0
    assert t1.read_bytes() == t2.read_bytes()
    rows = read_csv(t1)
    assert [float(r["value"]) for r in rows] == [0.1, 1.0, 5.0]
    assert int(rows[-1]["nnz"]) < int(rows[0]["nnz"])


@pytest.mark.parametrize("text, integer, expected", [
    ("0.1,1,5", False, [0.1, 1.0, 5.0]),
    ("60:140:5", True, [60, 80, 100, 120, 140]),
    ("0:1:3", False, [0.0, 0.5, 1.0]),
])
def test_parse_range(text, integer, expected):
    assert parse_range(text, integer) == expected


@pytest.mark.parametrize("text", ["", "a,b", "1:2", "1:2:0"])
def test_parse_range_rejects(text):
    with pytest.raises(UsageError):
        parse_range(text)


def test_dataset_eval_tune_round(tmp_path):
    data = tmp_path / "d.json"
    assert run("dataset", "--agents", 2, "--count", 4, "--sigma", 0, "--gamma", 0.1,
               "--out", data) == 0
    d = json.loads(data.read_text())
    assert d["count"] == 4
    assert all(e["K_star"] == d["examples"][0]["K_star"] for e in d["examples"])

    # references scored against themselves
    score = tmp_path / "self.csv"
    assert run("eval", "--dataset", data, "--estimates", data, "--out", score) == 0
    assert float(read_csv(score)[0]["nmse"]) == 0.0

    net = tmp_path / "net.json"
    assert run("tune", "--dataset", data, "--train-count", 2, "--layers", 3, "--epochs", 5,
               "--out", net) == 0
    table = tmp_path / "eval.csv"
    assert run("eval", "--dataset", data, "--train-count", 2, "--net", net,
               "--out", table) == 0
    rows = read_csv(table)
    assert [int(r["depth"]) for r in rows] == [1, 2, 3]
    # with sigma = 0 the test plants equal the training plants, so training
    # cannot make the full-depth error worse
    assert float(rows[-1]["nmse_tuned"]) <= float(rows[-1]["nmse_untuned"])


def test_eval_split_must_leave_test_examples(tmp_path):
    data = tmp_path / "d.json"
    run("dataset", "--agents", 1, "--count", 2, "--sigma", 0, "--gamma", 0.1, "--out", data)
    assert run("eval", "--dataset", data, "--train-count", 2, "--out", tmp_path / "e.csv") == 1


def test_replay_reproduces_outputs(plant5, tmp_path):
    out = tmp_path / "k.json"
    run("solve", "--plant", plant5, "--gamma", 2, "--out", out)
    before = out.read_bytes(), (tmp_path / "k.trace.csv").read_bytes()
    out.unlink()
    assert run("replay", tmp_path / "k.json.manifest.json") == 0
    assert (out.read_bytes(), (tmp_path / "k.trace.csv").read_bytes()) == before


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "sparselqr", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and __version__ in proc.stdout
