import json
import subprocess
import sys

import numpy as np
import pytest

from rotlab import solve
from rotlab.cli import main
from rotlab.geometry import CostSpec, DiscreteMeasure
from rotlab.inference import cost_clt_variance
from rotlab.io import (estimator_input_hash, load_solution, read_points_csv, write_points_csv,
                       write_solution)

from conftest import SPECS, random_measure


def _write(path, text):
    path.write_text(text)
    return str(path)


@pytest.fixture
def sparse_csvs(tmp_path):
    # two atoms 10 apart in squared distance: the sparse 2x2 Tsallis fixture
    p = _write(tmp_path / "p.csv", "x,weight\n0,0.5\n3.1622776601683795,0.5\n")
    return p, p


def test_points_csv(tmp_path):
    m = read_points_csv(_write(tmp_path / "a.csv", "x,y\n0,1\n2,3\n"))
    assert m.points.tolist() == [[0, 1], [2, 3]] and m.weights.tolist() == [0.5, 0.5]
    m = read_points_csv(_write(tmp_path / "b.csv", "x,Weight\n0,0.25\n2,0.75\n"))
    assert m.weights.tolist() == [0.25, 0.75]
    for bad in ("0,1\n2,3\n", "x,y\n0,1\n2\n", "x\nfoo\n", "", "x,weight\n0,0\n1,1\n"):
        with pytest.raises(ValueError):
            read_points_csv(_write(tmp_path / "bad.csv", bad))
    r = random_measure(4, 3, 1)
    write_points_csv(r, tmp_path / "r.csv")
    back = read_points_csv(tmp_path / "r.csv")
    assert np.array_equal(back.points, r.points) and np.array_equal(back.weights, r.weights)


def test_solution_roundtrip(tmp_path):
    P, Q = random_measure(4, 2, 1), random_measure(3, 2, 2)
    sol = solve(P, Q, CostSpec("sqeuclidean"), SPECS["tsallis1.5"], 0.3)
    write_solution(sol, tmp_path / "s.json")
    back = load_solution(tmp_path / "s.json")
    assert estimator_input_hash(back) == estimator_input_hash(sol)
    assert np.array_equal(back.coupling, sol.coupling)
    assert cost_clt_variance(back).sigma2 == cost_clt_variance(sol).sigma2
    doc = json.loads((tmp_path / "s.json").read_text())
    for key in ("format_version", "epsilon", "divergence", "f", "g", "coupling",
                "primal_value", "dual_value", "residual", "iterations"):
        assert key in doc
    doc["f"][0] += 1e-3
    (tmp_path / "t.json").write_text(json.dumps(doc))
    with pytest.raises(ValueError):
        load_solution(tmp_path / "t.json")


def test_cli_solve_single_atoms(tmp_path, capsys):
    p = _write(tmp_path / "p.csv", "x,y\n0.2,0.1\n")
    q = _write(tmp_path / "q.csv", "x,y\n0.7,0.4\n")
    for div in ("kl", "quad", "tsallis:1.5"):
        assert main(["solve", "--p", p, "--q", q, "--divergence", div]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["value"] == pytest.approx(0.34, abs=1e-14)


def test_cli_solve_sparse(tmp_path, sparse_csvs, capsys):
    p, q = sparse_csvs
    out = tmp_path / "s.json"
    assert main(["solve", "--p", p, "--q", q, "--divergence", "tsallis:1.5", "--epsilon", "1",
                 "--out", str(out), "--diagnostics"]) == 0
    doc = json.loads(out.read_text())
    c = np.array(doc["coupling"])
    assert c[0, 1] == 0 and c[1, 0] == 0
    np.testing.assert_allclose(np.diag(c), 0.5, atol=1e-15)
    assert doc["diagnostics"]["support_fraction"] == 0.5
    summary = json.loads(capsys.readouterr().out)
    assert summary["value"] == pytest.approx(0.2761423749153968, abs=1e-6)


def test_cli_malformed_input(tmp_path, capsys):
    bad = _write(tmp_path / "bad.csv", "x\n0\nabc\n")
    out = tmp_path / "o.json"
    assert main(["solve", "--p", bad, "--q", bad, "--divergence", "kl", "--out", str(out)]) == 1
    assert not out.exists()
    assert "non-numeric" in capsys.readouterr().err
    good = _write(tmp_path / "g.csv", "x\n0\n1\n")
    assert main(["solve", "--p", good, "--q", good, "--divergence", "bogus"]) == 1
    assert main(["solve", "--p", good, "--divergence", "kl"]) == 1


def test_cli_no_convergence(tmp_path):
    P = random_measure(15, 2, 7)
    p = tmp_path / "p.csv"
    write_points_csv(P, p)
    assert main(["solve", "--p", str(p), "--q", str(p), "--divergence", "kl",
                 "--epsilon", "0.05", "--max-iter", "1", "--tol", "1e-15"]) == 2


def test_cli_config(tmp_path, capsys):
    cfg = _write(tmp_path / "c.json", json.dumps({"d": 1, "epsilon": 0.5, "divergence": "quad"}))
    assert main(["oracle", "--config", cfg]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["C"] == pytest.approx(7 / 24, abs=1e-12)
    # flags override the file
    assert main(["oracle", "--config", cfg, "--epsilon", "1.0"]) == 0
    assert json.loads(capsys.readouterr().out)["epsilon"] == 1.0
    bad = _write(tmp_path / "b.json", json.dumps({"d": 1, "colour": "red"}))
    assert main(["oracle", "--config", bad]) == 1
    assert "colour" in capsys.readouterr().err


def test_cli_oracle(capsys):
    assert main(["oracle", "--d", "1", "--epsilon", "0.5", "--divergence", "quad"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert set(out) >= {"d", "epsilon", "divergence", "C", "rot_value",
                        "quadrature_error_estimate"}
    assert out["C"] == pytest.approx(0.2916667, abs=1e-7)
    assert main(["oracle", "--d", "4", "--rule", "gauss", "--order", "6"]) == 2


def test_cli_torus_and_slope(tmp_path, capsys):
    csv_path = tmp_path / "r.csv"
    summary = tmp_path / "s.json"
    args = ["torus", "--ns", "10,30,100", "--reps", "3", "--seed", "42", "--out", str(csv_path)]
    assert main(args + ["--summary", str(summary)]) == 0
    rows = csv_path.read_text().splitlines()
    assert rows[0] == "divergence,d,epsilon,n,rep,seed,rot_emp,rot_pop,abs_err,solve_iters,residual"
    assert len(rows) == 1 + 9
    first = csv_path.read_bytes()
    assert main(args) == 0 and csv_path.read_bytes() == first
    capsys.readouterr()
    assert main(["slope", "--csv", str(csv_path)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert set(out) >= {"alpha", "intercept", "stderr", "per_n_means"}
    assert out["alpha"] == json.loads(summary.read_text())["alpha"]


def test_cli_slope_synthetic(tmp_path, capsys):
    lines = ["divergence,d,epsilon,n,rep,seed,rot_emp,rot_pop,abs_err,solve_iters,residual"]
    for n in (10, 100, 1000):
        lines.append(f"quad,1,0.5,{n},0,1,{1 / n!r},0.0,{1 / n!r},1,0.0")
    path = _write(tmp_path / "syn.csv", "\n".join(lines) + "\n")
    assert main(["slope", "--csv", path]) == 0
    assert json.loads(capsys.readouterr().out)["alpha"] == pytest.approx(-1, abs=1e-12)
    assert main(["slope", "--csv", _write(tmp_path / "x.csv", "a,b\n1,2\n")]) == 1


def test_cli_clt_roundtrip(tmp_path, capsys):
    P, Q = random_measure(4, 2, 3), random_measure(5, 2, 4)
    pp, qq = tmp_path / "p.csv", tmp_path / "q.csv"
    write_points_csv(P, pp)
    write_points_csv(Q, qq)
    sol_path = tmp_path / "s.json"
    assert main(["solve", "--p", str(pp), "--q", str(qq), "--divergence", "kl",
                 "--out", str(sol_path)]) == 0
    stored = json.loads(sol_path.read_text())["input_hash"]
    capsys.readouterr()
    for kind in ("cost", "potential"):
        assert main(["clt", "--solution", str(sol_path), "--kind", kind]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["input_hash"] == stored and out["kind"] == kind
    assert main(["clt", "--solution", str(sol_path), "--kind", "coupling",
                 "--eta-cell", "1,2", "--monte-carlo", "--n", "500", "--reps", "20"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["sigma2"] > 0 and out["monte_carlo"]["reps"] == 20
    assert main(["clt", "--solution", str(sol_path), "--kind", "coupling"]) == 1
    assert main(["clt", "--kind", "cost", "--p", str(pp), "--q", str(qq)]) == 0


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "rotlab", "--version"], capture_output=True,
                       text=True)
    assert r.returncode == 0 and "rotlab" in r.stdout
