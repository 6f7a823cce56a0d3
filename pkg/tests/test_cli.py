import json
import math
import subprocess
import sys

import numpy as np
import pytest

from conftest import random_discrete
from mmflow.cli import run
from mmflow.convex import MaxAffineConvex, integrate_exp_neg
from mmflow.measures import (DiscreteMeasure, GridDensity, load_measure,
                             save_measure)


@pytest.fixture
def files(tmp_path, two_atoms):
    p = tmp_path / "mu.json"
    save_measure(two_atoms, p)
    return tmp_path, p


def _json(capsys):
    return json.loads(capsys.readouterr().out)


def test_solve(files, capsys):
    tmp, mu = files
    assert run(["solve", "--mu", str(mu), "--tol", "1e-8"]) == 0
    rep = _json(capsys)
    assert rep["residual"] <= 1e-8 and rep["converged"]
    np.testing.assert_allclose(rep["offsets"], [-math.log(2)] * 2, atol=1e-6)
    assert {"logZ", "trace", "gauge"} <= set(rep)


def test_solve_out_and_density(files):
    tmp, mu = files
    out, dens = tmp / "rep.json", tmp / "rho.json"
    assert run(["solve", "--mu", str(mu), "--out", str(out),
                "--emit-density", str(dens), "--density-cells", "2000"]) == 0
    assert json.loads(out.read_text())["converged"]
    rho = load_measure(dens)
    assert isinstance(rho, GridDensity) and rho.values.size == 2000
    assert abs(rho.cell_masses().sum() - 1) <= 1e-12


def test_solve_flags_failure(files, capsys):
    tmp, _ = files
    mu = tmp / "m5.json"
    save_measure(random_discrete(np.random.default_rng(1), 6, 1), mu)
    code = run(["solve", "--mu", str(mu), "--tol", "1e-14", "--max-iter", "1",
                "--method", "gradient"])
    assert code == 2
    assert _json(capsys)["converged"] is False


def test_solve_uncentered_is_input_error(tmp_path, capsys):
    p = tmp_path / "bad.json"
    save_measure(DiscreteMeasure([1.0, 2.0], [0.5, 0.5]), p)
    assert run(["solve", "--mu", str(p)]) == 1
    assert "center mu first" in capsys.readouterr().err


def test_transport(files, capsys):
    tmp, mu = files
    assert run(["transport", "--rho", str(mu), "--mu", str(mu)]) == 0
    out = _json(capsys)
    assert out["value"] == 1.0
    assert sorted(map(tuple, out["entries"])) == [(0, 0, 0.5), (1, 1, 0.5)]
    assert run(["transport", "--rho", str(mu), "--mu", str(mu),
                "--cost", "sq"]) == 0
    assert _json(capsys)["value"] == 0.0


def test_primal(files, capsys):
    tmp, mu = files
    assert run(["primal", "--mu", str(mu), "--grid", "-10:10:512"]) == 0
    out = _json(capsys)
    assert out["converged"] and out["fixed_point_residual"] <= 1e-6
    assert len(out["values"]) == 512
    assert run(["primal", "--mu", str(mu), "--grid=-10:10:512"]) == 0
    assert _json(capsys)["values"] == out["values"]


def test_demo(capsys):
    assert run(["demo", "hyperplane", "--n", "1,5,50,500"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "n,entropy,correlation_bound,objective_upper_bound"
    assert lines[2].startswith("5,-2.302585,")
    assert len(lines) == 5


def test_u_commands(tmp_path, capsys):
    p = tmp_path / "u.json"
    u = MaxAffineConvex([-1.0, 0.0, 1.0], [-math.log(2), 5.0, -math.log(2)])
    p.write_text(json.dumps(u.to_dict()))
    assert run(["u", "eval", "--u", str(p), "--x", "[-2, 0.5]"]) == 0
    out = _json(capsys)
    np.testing.assert_allclose(out["values"], [2 + math.log(2), 0.5 + math.log(2)])
    assert run(["u", "eval", "--u", str(p), "--x", "-3"]) == 0
    assert _json(capsys)["values"] == [3 + math.log(2)]
    assert run(["u", "cells", "--u", str(p)]) == 0
    assert _json(capsys)["active"] == [True, False, True]
    assert run(["u", "mass", "--u", str(p)]) == 0
    out = _json(capsys)
    assert abs(out["Z"] - 1) <= 1e-12
    assert abs(out["moment_identity_gap"]) <= 1e-12


def test_verify_entropy_breakdown(tmp_path, capsys):
    rho = GridDensity.uniform(0, 1, 64)
    p = tmp_path / "rho.json"
    save_measure(rho, p)
    assert run(["verify", "entropy", "--rho", str(p)]) == 0
    out = _json(capsys)
    assert abs(out["total"] - (out["e1"] + out["e2"] + out["e3"])) <= 1e-12


def test_verify_suites(capsys):
    assert run(["verify", "--seed", "3", "measures", "convex"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(l.startswith("PASS") for l in lines)
    assert {l.split()[1] for l in lines} == {"measures:", "convex:"}


@pytest.mark.parametrize("argv", [
    ["solve"],
    ["solve", "--mu", "x.json", "--bogus"],
    ["frobnicate"],
    ["verify", "nope"],
    ["solve", "--mu", "does-not-exist.json"],
    ["primal", "--mu", "x.json", "--grid", "1:0:5"],
    ["demo", "hyperplane", "--n", "a,b"],
    ["verify", "--threads", "0"],
])
def test_input_errors(argv, capsys):
    assert run(argv) == 1
    assert capsys.readouterr().err


def test_threads_env(monkeypatch, capsys):
    monkeypatch.setenv("MMFLOW_THREADS", "zero")
    assert run(["demo", "hyperplane", "--n", "5"]) == 1
    monkeypatch.setenv("MMFLOW_THREADS", "4")
    assert run(["demo", "hyperplane", "--n", "5"]) == 0


def test_byte_identical_outputs(files, capsys):
    tmp, mu = files
    outs = []
    for k in range(2):
        target = tmp / f"r{k}.json"
        assert run(["solve", "--mu", str(mu), "--init-seed", "5",
                    "--out", str(target)]) == 0
        outs.append(target.read_bytes())
    assert outs[0] == outs[1]
    runs = []
    for _ in range(2):
        run(["verify", "--seed", "11", "ot_core"])
        runs.append(capsys.readouterr().out)
    assert runs[0] == runs[1]


def test_full_precision_round_trip(tmp_path, capsys):
    mu = random_discrete(np.random.default_rng(8), 7, 1)
    p = tmp_path / "mu.json"
    save_measure(mu, p)
    assert load_measure(p) == mu
    dens = tmp_path / "rho.json"
    assert run(["solve", "--mu", str(p), "--emit-density", str(dens)]) == 0
    rep = _json(capsys)
    rho = load_measure(dens)
    save_measure(rho, tmp_path / "again.json")
    np.testing.assert_array_equal(load_measure(tmp_path / "again.json").values,
                                  rho.values)
    # reloaded offsets still describe the unit-mass solution
    u = MaxAffineConvex(rep["sites"], rep["offsets"])
    assert abs(integrate_exp_neg(u)[0] - 1) <= 1e-12


def test_module_entry_point(files):
    tmp, mu = files
    r = subprocess.run([sys.executable, "-m", "mmflow.cli", "demo", "hyperplane",
                        "--n", "5"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("n,")
