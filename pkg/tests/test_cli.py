import numpy as np
import pytest

from npsecontrol.cli import (EXIT_CONFIG, EXIT_OK, EXIT_OPTIMIZER, ConfigError, load_config, main,
                             parse_config)
from npsecontrol.core import read_field_csv
from npsecontrol.potential import read_trajectory_csv

SMALL = """
# coarse desk test
r_comp = 0.5
n_z = 64
horizon_T = 2
dt = 0.02
record_every = 25
hold = 1
"""


def write_cfg(tmp_path, text=SMALL, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text + f"\noutput_dir = {tmp_path / 'out'}\n")
    return path


def test_defaults_are_filled():
    cfg = parse_config("r_comp = 0.5")
    assert (cfg.m, cfg.omega_perp, cfg.a_s, cfg.n_atoms) == (1.368, 10.0, 4.2e-3, 5000.0)
    assert cfg.sigma == 3.0 and cfg.gamma_reg == 1e-5
    assert cfg.target == 25.0 and cfg.n_t == 4500


@pytest.mark.parametrize("text", [
    "r_comp = 0.5\nlambda_T = 25",   # both widths
    "",                             # neither
    "r_comp = 0.5\nn_z = -4",
    "r_comp = 0.5\nbogus = 1",
    "r_comp = 0.5\nn_z = 12.5",
    "r_comp = 0.5\ncost = fidelity",
    "lambda_T = 60",
    "r_comp = 0.5\nhorizon_T = 1.005",
    "r_comp = 0.5\nm = abc",
])
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_hash_tracks_content():
    a = parse_config("r_comp = 0.5")
    b = parse_config("r_comp = 0.5\n# same\n")
    c = parse_config("r_comp = 0.25")
    assert a.digest() == b.digest() != c.digest()


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.cfg")
    assert main(["tmin", str(tmp_path / "nope.cfg")]) == EXIT_CONFIG


def test_groundstate_runner(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    assert main(["groundstate", str(cfg)]) == EXIT_OK
    out = tmp_path / "out"
    psi0, grid = read_field_csv(out / "groundstate_initial.csv")
    psi1, _ = read_field_csv(out / "groundstate_final.csv")
    assert grid.n_z == 64
    first = (out / "groundstate_initial.csv").read_text().splitlines()[0]
    assert first.startswith("# npsecontrol groundstate config=")
    # compressed plateau roughly twice as dense
    rho0, rho1 = np.abs(psi0) ** 2, np.abs(psi1) ** 2
    assert 1.7 < rho1.max() / rho0.max() < 2.3
    again = (out / "groundstate_initial.csv").read_bytes()
    assert main(["groundstate", str(cfg)]) == EXIT_OK
    assert (out / "groundstate_initial.csv").read_bytes() == again


def test_params_override(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["groundstate", str(cfg), "--params", "a_s=0"]) == EXIT_OK
    psi, grid = read_field_csv(tmp_path / "out" / "groundstate_initial.csv")
    rho = np.abs(psi) ** 2
    mid = np.abs(grid.z) < 5
    # linear limit: rounded half-sine, not a flat plateau
    assert rho[mid].max() > 1.4 / 100
    assert main(["groundstate", str(cfg), "--params", "w0=3"]) == EXIT_CONFIG


def test_simulate_constant_and_ramp(tmp_path):
    cfg = write_cfg(tmp_path, SMALL.replace("r_comp = 0.5", "lambda_T = 0"))
    assert main(["simulate", str(cfg)]) == EXIT_OK
    body = np.loadtxt(tmp_path / "out" / "simulate_carpet.csv", delimiter=",", skiprows=2)
    rho = body[:, 1:]
    assert np.max(np.abs(rho - rho[0])) <= 1e-8
    cfg = write_cfg(tmp_path)
    assert main(["simulate", str(cfg)]) == EXIT_OK
    summary = (tmp_path / "out" / "simulate_summary.txt").read_text()
    assert "J_e = " in summary and "J_s = " in summary


def test_simulate_from_trajectory_file(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["simulate", str(cfg)]) == EXIT_OK
    traj = tmp_path / "out" / "simulate_trajectory.csv"
    assert read_trajectory_csv(traj).time_grid.n_t == 100
    cfg2 = write_cfg(tmp_path, SMALL + f"\ntrajectory = {traj}\n", name="b.cfg")
    assert main(["simulate", str(cfg2)]) == EXIT_OK
    bad = write_cfg(tmp_path, SMALL.replace("dt = 0.02", "dt = 0.01") + f"\ntrajectory = {traj}\n",
                    name="c.cfg")
    assert main(["simulate", str(bad)]) == EXIT_CONFIG


def test_optimize_writes_outputs(tmp_path):
    cfg = write_cfg(tmp_path, SMALL + "\nmax_iter = 3\n")
    code = main(["optimize", str(cfg)])
    assert code in (EXIT_OK, EXIT_OPTIMIZER)
    out = tmp_path / "out"
    log = (out / "optimize_convergence.csv").read_text().splitlines()
    assert log[1] == "iteration,cost,grad_norm,step,wall_time"
    err = np.loadtxt(out / "optimize_error_evolution.csv", delimiter=",", skiprows=2)
    assert err[-1, 0] == pytest.approx(3.0)  # horizon plus hold
    assert (out / "optimize_trajectory.csv").exists()


def test_optimize_none_is_simulate(tmp_path):
    cfg = write_cfg(tmp_path, SMALL + "\noptimizer = none\n")
    assert main(["optimize", str(cfg)]) == EXIT_OK
    assert (tmp_path / "out" / "simulate_summary.txt").exists()


def test_bfa_and_sweep(tmp_path):
    cfg = write_cfg(tmp_path, SMALL + "\noptimizer = bfa\nbfa_order = 2\nmax_iter = 2\nbfa_orders = 1,2\n")
    assert main(["optimize", str(cfg)]) in (EXIT_OK, EXIT_OPTIMIZER)
    assert "coefficients" in (tmp_path / "out" / "optimize_summary.txt").read_text()
    assert main(["sweep-bfa", str(cfg)]) in (EXIT_OK, EXIT_OPTIMIZER)
    rows = (tmp_path / "out" / "bfa_sweep.csv").read_text().splitlines()
    assert rows[1] == "M,cost,iterations,converged" and len(rows) == 4


def test_tmin(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SMALL.replace("n_z = 64", "n_z = 512"))
    assert main(["tmin", str(cfg)]) == EXIT_OK
    text = capsys.readouterr().out
    vals = dict(line.split(" = ") for line in text.strip().splitlines())
    assert float(vals["T_min_flat"]) == pytest.approx(48.5548982939157, rel=1e-10)
    assert abs(float(vals["T_min_plateau"]) / 45.96 - 1) <= 0.10
    cfg1 = write_cfg(tmp_path, SMALL.replace("r_comp = 0.5", "r_comp = 1"), name="one.cfg")
    assert main(["tmin", str(cfg1)]) == EXIT_OK
    vals = dict(line.split(" = ") for line in capsys.readouterr().out.strip().splitlines())
    assert float(vals["T_min_flat"]) == pytest.approx(100 / float(vals["c_s_flat"]), rel=1e-12)
