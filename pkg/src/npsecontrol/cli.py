"""Command-line runners: ground states, forward runs, optimization, T_min.

Configuration files are flat ``key = value`` text (``#`` comments allowed);
unknown keys are rejected. Example::

    r_comp = 0.5
    horizon_T = 45
    cost = energy
    optimizer = ioa

Every output file starts with a comment line carrying a hash of the resolved
configuration, so results can be traced back to the exact inputs.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import logging
import math
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .adjoint import CostKind
from .core import PhysicalParams, SolverError, make_spatial_grid, make_time_grid, write_field_csv
from .dynamics import (GroundStateConfig, estimate_tmin, ground_state, plateau_density,
                       speed_of_sound, write_carpet_csv)
from .optimize import (StopCriteria, build_problem, costs_of_final, error_evolution, optimize_bfa,
                       optimize_ioa, sweep_bfa_order, terminal_costs)
from .potential import (BoxPotential, ControlTrajectory, compression_ratio, displacement_for_ratio,
                        read_trajectory_csv, write_trajectory_csv)

log = logging.getLogger("npsecontrol")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_OPTIMIZER = 4

PARAM_KEYS = ("m", "omega_perp", "a_s", "n_atoms")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # gas (typical experimental values)
    m: float = 1.368
    omega_perp: float = 10.0
    a_s: float = 4.2e-3
    n_atoms: float = 5000.0
    # box
    v_max: float = 200.0
    w0: float = 100.0
    sigma: float = 3.0
    # discretization
    length_L: float = 120.0
    n_z: int = 512
    dt: float = 0.01
    # scenario; exactly one of lambda_T / r_comp
    lambda_0: float = 0.0
    lambda_T: float | None = None
    r_comp: float | None = None
    horizon_T: float = 45.0
    # cost and optimizer
    cost: str = "energy"
    gamma_reg: float = 1e-5
    optimizer: str = "ioa"
    bfa_order: int = 4
    bfa_orders: str = "1,2,3,4,5,6"
    gtol: float = 1e-6
    max_iter: int = 1000
    fd_step: float = 1e-6
    # output
    output_dir: str = "out"
    record_every: int = 10
    hold: float = 20.0
    trajectory: str = ""
    seed: int = 0

    @property
    def params(self) -> PhysicalParams:
        return PhysicalParams(self.m, self.omega_perp, self.a_s, self.n_atoms)

    @property
    def potential(self) -> BoxPotential:
        return BoxPotential(self.v_max, self.w0, self.sigma)

    @property
    def target(self) -> float:
        if self.lambda_T is not None:
            return self.lambda_T
        return displacement_for_ratio(self.w0, self.r_comp)

    @property
    def n_t(self) -> int:
        return int(round(self.horizon_T / self.dt))

    @property
    def kind(self) -> CostKind:
        return CostKind(self.cost)

    @property
    def stop(self) -> StopCriteria:
        return StopCriteria(gtol=self.gtol, max_iter=self.max_iter)

    def canonical(self) -> str:
        return "\n".join(f"{f.name}={getattr(self, f.name)!r}" for f in fields(self))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key: str, raw: str):
    kind = _TYPES[key]
    try:
        if kind == "int":
            value = float(raw)
            if value != int(value):
                raise ValueError
            return int(value)
        if kind in ("float", "float | None"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.split(' ')[0]}") from None
    return raw.strip()


def validate(cfg: RunConfig) -> RunConfig:
    """Check cross-field invariants; raise :class:`ConfigError` naming the first violation."""
    if (cfg.lambda_T is None) == (cfg.r_comp is None):
        raise ConfigError("set exactly one of lambda_T and r_comp")
    for name in ("m", "v_max", "w0", "sigma", "length_L", "dt", "horizon_T", "fd_step", "gtol"):
        value = getattr(cfg, name)
        if not (math.isfinite(value) and value > 0):
            raise ConfigError(f"{name} must be positive, got {value}")
    for name in ("omega_perp", "a_s", "n_atoms", "gamma_reg", "hold"):
        value = getattr(cfg, name)
        if not (math.isfinite(value) and value >= 0):
            raise ConfigError(f"{name} must be non-negative, got {value}")
    if cfg.n_z < 16:
        raise ConfigError(f"n_z must be an integer >= 16, got {cfg.n_z}")
    if abs(cfg.n_t * cfg.dt - cfg.horizon_T) > 1e-9 * cfg.horizon_T or cfg.n_t < 2:
        raise ConfigError(f"horizon_T={cfg.horizon_T} is not a multiple (>= 2) of dt={cfg.dt}")
    if cfg.r_comp is not None and not 0 < cfg.r_comp <= 1:
        raise ConfigError(f"r_comp must lie in (0, 1], got {cfg.r_comp}")
    try:
        compression_ratio(cfg.w0, cfg.target)
        compression_ratio(cfg.w0, cfg.lambda_0)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.w0 >= cfg.length_L:
        raise ConfigError("the box (w0) must fit inside the domain (length_L)")
    if cfg.cost not in ("energy", "state"):
        raise ConfigError(f"cost must be 'energy' or 'state', got {cfg.cost!r}")
    if cfg.optimizer not in ("ioa", "bfa", "none"):
        raise ConfigError(f"optimizer must be 'ioa', 'bfa' or 'none', got {cfg.optimizer!r}")
    if cfg.bfa_order < 1 or cfg.max_iter < 0 or cfg.record_every < 1:
        raise ConfigError("bfa_order and record_every must be >= 1, max_iter >= 0")
    try:
        _orders(cfg)
    except ValueError:
        raise ConfigError(f"bfa_orders must be a comma list of integers >= 1, got {cfg.bfa_orders!r}") from None
    return cfg


def _orders(cfg: RunConfig) -> list[int]:
    out = [int(x) for x in cfg.bfa_orders.split(",") if x.strip()]
    if any(m < 1 for m in out):
        raise ValueError
    return out


def parse_config(text: str, overrides: dict | None = None, source: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",),
                                       inline_comment_prefixes=("#",), delimiters=("=",))
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    values = {}
    for key, raw in list(parser["run"].items()) + list((overrides or {}).items()):
        if key not in _TYPES:
            raise ConfigError(f"{source}: unknown key {key!r}")
        values[key] = _convert(key, raw)
    return validate(RunConfig(**values))


def load_config(path, overrides: dict | None = None) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text, overrides, str(path))


# --- runners -------------------------------------------------------------

def _header(cfg: RunConfig, what: str) -> str:
    return f"npsecontrol {what} config={cfg.digest()}"


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_summary(path: Path, cfg: RunConfig, what: str, rows: dict) -> None:
    with open(path, "w") as fh:
        fh.write(f"# {_header(cfg, what)}\n")
        for k, v in rows.items():
            fh.write(f"{k} = {v}\n")


def _problem(cfg: RunConfig):
    grid = make_spatial_grid(cfg.length_L, cfg.n_z)
    tg = make_time_grid(cfg.horizon_T, cfg.n_t)
    return build_problem(cfg.potential, cfg.params, grid, tg, cfg.lambda_0, cfg.target, cfg.kind,
                         cfg.gamma_reg)


def run_groundstate(cfg: RunConfig) -> dict:
    out = _outdir(cfg)
    grid = make_spatial_grid(cfg.length_L, cfg.n_z)
    res = {}
    rho = []
    for label, lam in (("initial", cfg.lambda_0), ("final", cfg.target)):
        gs = ground_state(cfg.potential, lam, cfg.params, grid, GroundStateConfig())
        write_field_csv(out / f"groundstate_{label}.csv", gs.psi0, grid,
                        comment=f"{_header(cfg, 'groundstate')} lambda={lam!r}")
        rho.append(np.abs(gs.psi0) ** 2)
        res[f"{label}_lambda"] = lam
        res[f"{label}_energy"] = gs.energy
        res[f"{label}_chem_potential"] = gs.chem_potential
        res[f"{label}_plateau_density"] = plateau_density(gs.psi0, grid)
    with open(out / "groundstate_density.csv", "w") as fh:
        fh.write(f"# {_header(cfg, 'groundstate')}\n")
        fh.write("z,rho_initial,rho_final\n")
        for z, a, b in zip(grid.z, *rho):
            fh.write(f"{z:.17g},{a:.17g},{b:.17g}\n")
    _write_summary(out / "groundstate_summary.txt", cfg, "groundstate", res)
    return res


def _trajectory(cfg: RunConfig, problem) -> ControlTrajectory:
    if not cfg.trajectory:
        return problem.linear_ramp()
    tr = read_trajectory_csv(cfg.trajectory)
    if tr.time_grid.n_t != problem.time_grid.n_t or not math.isclose(
            tr.time_grid.horizon_T, problem.time_grid.horizon_T, rel_tol=1e-12):
        raise ConfigError(f"trajectory {cfg.trajectory} does not match horizon_T/dt")
    return ControlTrajectory(tr.samples, problem.time_grid)


def _run_forward(cfg: RunConfig, problem, control: ControlTrajectory, what: str) -> dict:
    out = _outdir(cfg)
    t, err, prop = error_evolution(control, problem, hold=cfg.hold)
    n = problem.time_grid.n_t
    psi_T = prop.levels[n]
    je, js = costs_of_final(psi_T, control, problem)
    excess, _ = terminal_costs(psi_T, problem)
    stride = cfg.record_every
    idx = sorted(set(range(0, len(t), stride)) | {len(t) - 1})
    write_carpet_csv(out / f"{what}_carpet.csv", t[idx], prop.levels[idx], problem.grid,
                     comment=_header(cfg, what))
    with open(out / f"{what}_error_evolution.csv", "w") as fh:
        fh.write(f"# {_header(cfg, what)} hold={cfg.hold!r}\n")
        fh.write("t,state_error\n")
        for ti, e in zip(t, err):
            fh.write(f"{ti:.17g},{e:.17g}\n")
    write_trajectory_csv(out / f"{what}_trajectory.csv", control, comment=_header(cfg, what))
    return {"J_e": je, "J_s": js, "energy_excess_T": excess, "state_error_T": float(err[n]),
            "state_error_end_of_hold": float(err[-1])}


def run_simulate(cfg: RunConfig) -> dict:
    problem = _problem(cfg)
    res = _run_forward(cfg, problem, _trajectory(cfg, problem), "simulate")
    _write_summary(Path(cfg.output_dir) / "simulate_summary.txt", cfg, "simulate", res)
    return res


def run_optimize(cfg: RunConfig) -> tuple[dict, bool]:
    """Returns (summary, converged)."""
    if cfg.optimizer == "none":
        return run_simulate(cfg), True
    problem = _problem(cfg)
    out = _outdir(cfg)
    if cfg.optimizer == "ioa":
        rep = optimize_ioa(_trajectory(cfg, problem), problem, cfg.stop)
    else:
        rep = optimize_bfa(np.zeros(cfg.bfa_order), problem, cfg.stop, cfg.fd_step)
    rep.write_log_csv(out / "optimize_convergence.csv", comment=_header(cfg, "optimize"))
    res = _run_forward(cfg, problem, rep.best_control, "optimize")
    res.update({"optimizer": cfg.optimizer, "iterations": rep.iterations,
                "converged": rep.converged, "message": rep.message,
                "cost_evaluations": rep.n_cost_evals, "wall_time": rep.wall_time})
    if rep.coefficients is not None:
        res["coefficients"] = " ".join(f"{a:.17g}" for a in rep.coefficients)
    _write_summary(out / "optimize_summary.txt", cfg, "optimize", res)
    return res, rep.converged


def run_tmin(cfg: RunConfig) -> dict:
    out = _outdir(cfg)
    grid = make_spatial_grid(cfg.length_L, cfg.n_z)
    r = compression_ratio(cfg.w0, cfg.target)
    c_flat = speed_of_sound(1.0 / cfg.w0, cfg.params)
    gs = ground_state(cfg.potential, cfg.lambda_0, cfg.params, grid)
    rho_p = plateau_density(gs.psi0, grid)
    c_plat = speed_of_sound(rho_p, cfg.params)
    res = {"r_comp": r, "rho_flat": 1.0 / cfg.w0, "c_s_flat": c_flat,
           "T_min_flat": estimate_tmin(cfg.w0, r, c_flat), "rho_plateau": rho_p,
           "c_s_plateau": c_plat, "T_min_plateau": estimate_tmin(cfg.w0, r, c_plat)}
    _write_summary(out / "tmin_summary.txt", cfg, "tmin", res)
    return res


def run_sweep_bfa(cfg: RunConfig) -> list:
    problem = _problem(cfg)
    out = _outdir(cfg)
    rows = sweep_bfa_order(_orders(cfg), problem, cfg.stop, cfg.fd_step)
    with open(out / "bfa_sweep.csv", "w") as fh:
        fh.write(f"# {_header(cfg, 'sweep-bfa')}\n")
        fh.write("M,cost,iterations,converged\n")
        for m, c, it, rep in rows:
            fh.write(f"{m},{c:.17g},{it},{int(rep.converged)}\n")
    return rows


# --- entry point ---------------------------------------------------------

def _parse_overrides(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or key not in PARAM_KEYS:
            raise ConfigError(f"--params expects KEY=VALUE with KEY in {PARAM_KEYS}, got {item!r}")
        out[key] = value.strip()
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="npsecontrol",
                                description="Optimal wall trajectories for compressing a quasi-1D Bose gas.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("groundstate", "ground states of the initial and final box"),
                        ("simulate", "forward run along a linear ramp or a trajectory file"),
                        ("optimize", "IOA or BFA optimization"),
                        ("tmin", "minimum-control-time estimates"),
                        ("sweep-bfa", "BFA over several basis sizes")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("config", help="flat key = value configuration file")
        s.add_argument("--params", nargs="+", metavar="KEY=VALUE",
                       help="override gas parameters (m, omega_perp, a_s, n_atoms)")
        s.add_argument("-o", "--output-dir", help="override output_dir")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = _parse_overrides(args.params)
        if args.output_dir:
            overrides["output_dir"] = args.output_dir
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "groundstate":
            res = run_groundstate(cfg)
        elif args.command == "simulate":
            res = run_simulate(cfg)
        elif args.command == "optimize":
            res, converged = run_optimize(cfg)
            for k, v in res.items():
                print(f"{k} = {v}")
            return EXIT_OK if converged else EXIT_OPTIMIZER
        elif args.command == "tmin":
            res = run_tmin(cfg)
        else:
            rows = run_sweep_bfa(cfg)
            for m, c, it, rep in rows:
                print(f"M={m} cost={c:.6e} iterations={it}")
            return EXIT_OK if all(r[3].converged for r in rows) else EXIT_OPTIMIZER
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    for k, v in res.items():
        print(f"{k} = {v}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
