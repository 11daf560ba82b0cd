"""End-to-end runs of the command-line tool on small configurations."""

import json

import pytest

from epimfg import __version__
from epimfg.cli import EXIT_CONFIG, EXIT_GATE, EXIT_OK, EXIT_SOLVER, config_hash, load_config, main
from epimfg.errors import ConfigError


def _write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def _summary(out):
    return json.loads((out / "summary.json").read_text())


def test_r0_prints_value(tmp_path, capsys):
    out = tmp_path / "r0"
    cfg = _write(tmp_path, {"options": {"beta_bar": 1.0}})
    assert main(["r0", "--config", cfg, "--out", str(out)]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "2.5"
    summary = _summary(out)
    assert summary["version"] == __version__
    assert len(summary["config_hash"]) == 64


def test_fo_mfe(tmp_path):
    out = tmp_path / "fo"
    assert main(["fo-mfe", "--out", str(out)]) == EXIT_OK
    s = _summary(out)
    assert s["passed"] and s["results"]["beta_max"] == 0.0
    assert s["results"]["alpha_final"] == pytest.approx(0.98, abs=1e-3)
    header = (out / "population.csv").read_text().splitlines()[0]
    assert header == "t,theta,rho_s,rho_a,rho_i,rho_r,rho_d,beta,alpha"


def test_stationary_summary(tmp_path):
    out = tmp_path / "st"
    assert main(["stationary", "--out", str(out)]) == EXIT_OK
    res = _summary(out)["results"]
    assert res["a_thresh"] == pytest.approx(0.305147, abs=1e-6)
    for entry in res["pde"]:
        assert abs(entry["pde_threshold"] - res["a_thresh"]) <= 2 / (entry["n_a"] - 1)
    lines = (out / "checks.csv").read_text().splitlines()
    assert lines[0] == "check,value,tolerance,pass"
    assert all(line.endswith(",1") for line in lines[1:])


def test_unknown_key_rejected(tmp_path):
    cfg = _write(tmp_path, {"grids": {"n_a": 51, "bogus": 1}, "output": str(tmp_path / "o")})
    assert main(["r0", "--config", cfg]) == EXIT_CONFIG
    with pytest.raises(ConfigError):
        load_config(cfg)


def test_unreadable_config(tmp_path):
    assert main(["r0", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_bad_params_are_config_errors(tmp_path):
    out = tmp_path / "bad"
    cfg = _write(tmp_path, {"params": {"gamma": 0.0}})
    assert main(["fo-mfe", "--config", cfg, "--out", str(out)]) == EXIT_CONFIG
    assert _summary(out)["error"]["type"] == "ZeroDiscount"


def test_solver_error_exit_code(tmp_path):
    out = tmp_path / "cfl"
    cfg = _write(tmp_path, {"grids": {"n_a": 101, "dt": 0.5, "horizon": 1.0}})
    assert main(["po-solve", "--config", cfg, "--out", str(out)]) == EXIT_SOLVER
    err = _summary(out)["error"]
    assert err["type"] == "CflViolation" and err["module"]


def test_flags_override_config(tmp_path):
    cfg_path = _write(tmp_path, {"grids": {"n_a": 51}, "mc": {"seed": 4}, "output": str(tmp_path / "a")})
    base = load_config(cfg_path)
    out = tmp_path / "b"
    assert main(["r0", "--config", cfg_path, "--out", str(out), "--seed", "9", "--grid-na", "31"]) == EXIT_OK
    s = _summary(out)
    base["output"], base["mc"]["seed"], base["grids"]["n_a"] = str(out), 9, 31
    assert s["config_hash"] == config_hash(base)
    assert config_hash(base) != config_hash(load_config(cfg_path))


def test_po_solve_is_byte_reproducible(tmp_path):
    cfg = {"grids": {"n_a": 51, "horizon": 1.0}}
    outputs = []
    for name in ("x", "y"):
        out = tmp_path / name
        assert main(["po-solve", "--config", _write(tmp_path, cfg), "--out", str(out)]) == EXIT_OK
        outputs.append(out)
    for csv in ("mean_field_in.csv", "mean_field_out.csv", "hjb.csv", "compartments.csv", "density.csv"):
        first = (outputs[0] / csv).read_bytes()
        assert first == (outputs[1] / csv).read_bytes(), csv
        assert b"\r" not in first and first.endswith(b"\n")


def test_mc_validate_small_run_is_reproducible_and_reports_gates(tmp_path):
    cfg = {
        "grids": {"n_a": 101},
        "mc": {"n_agents": 2000, "seed": 5, "dt_sim": 0.01},
        "options": {"sample_times": [0.5, 1.0]},
    }
    runs = []
    for name in ("m1", "m2"):
        out = tmp_path / name
        code = main(["mc-validate", "--config", _write(tmp_path, cfg), "--out", str(out)])
        assert code in (EXIT_OK, EXIT_GATE)
        runs.append(out)
    assert (runs[0] / "mc_compare.csv").read_bytes() == (runs[1] / "mc_compare.csv").read_bytes()
    header = (runs[0] / "mc_trajectory.csv").read_text().splitlines()[0]
    assert header == "t,beta_hat,alpha_hat,frac_s,frac_a,frac_i,frac_r,frac_d"
    gates = _summary(runs[0])["gates"]
    assert {"ks<=0.02", "compartments<=0.005", "negative control exceeds gate"} <= set(gates)


def test_po_mfe_observed_mode(tmp_path):
    out = tmp_path / "obs"
    cfg = {"grids": {"n_a": 2, "dt": 0.05, "horizon": 40.0}, "fixed_point": {"damping": 1.0}}
    assert main(["po-mfe", "--config", _write(tmp_path, cfg), "--out", str(out)]) == EXIT_OK
    s = _summary(out)
    assert s["results"]["converged"] and s["results"]["extra_iteration_residual"] <= 2e-5
    rows = (out / "convergence.csv").read_text().splitlines()
    assert rows[0] == "iter,residual" and len(rows) == s["results"]["iterations"] + 1


def test_po_mfe_non_convergence_is_reported(tmp_path):
    out = tmp_path / "nc"
    cfg = {"grids": {"n_a": 2, "dt": 0.05, "horizon": 40.0}, "fixed_point": {"damping": 1.0}}
    code = main(["po-mfe", "--config", _write(tmp_path, cfg), "--out", str(out), "--max-iters", "1"])
    assert code == EXIT_GATE
    s = _summary(out)
    assert s["gates"]["converged"] is False
    assert len(s["results"]["history"]) == 1
    assert "NotConverged" in s["results"]["flags"]
