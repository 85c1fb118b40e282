"""Sobolev-gradient quasi-Newton optimization of the wall trajectory.

Two strategies are provided:

* :func:`optimize_ioa` -- forward/adjoint gradients represented in H^1(0, T)
  (a Poisson solve in time), driving BFGS over the interior control samples.
* :func:`optimize_bfa` -- the control restricted to a linear ramp plus ``M``
  sine modes; BFGS on the coefficients with finite-difference gradients.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels
from .adjoint import (CostKind, CostSpec, adjoint_sweep, cost, regularization_gradient,
                      regularization_term, state_error, terminal_adjoint)
from .core import PhysicalParams, SpatialGrid, TimeGrid
from .dynamics import (GroundStateConfig, NpseStepperConfig, Propagation, dlambda_table,
                       ground_state, potential_table, propagate_values, total_energy)
from .potential import BoxPotential, ControlTrajectory, bfa_trajectory, linear_ramp_trajectory

log = logging.getLogger(__name__)


# --- problem definition --------------------------------------------------

@dataclass
class ControlProblem:
    pot: BoxPotential
    params: PhysicalParams
    grid: SpatialGrid
    time_grid: TimeGrid
    psi0: np.ndarray
    spec: CostSpec
    lambda_0: float
    lambda_T: float
    stepper: NpseStepperConfig = field(default_factory=NpseStepperConfig)

    def with_kind(self, kind: CostKind) -> "ControlProblem":
        spec = CostSpec(kind, self.spec.psi_des, self.spec.gamma_reg, self.spec.j_e_des)
        return ControlProblem(self.pot, self.params, self.grid, self.time_grid, self.psi0, spec,
                              self.lambda_0, self.lambda_T, self.stepper)

    def linear_ramp(self) -> ControlTrajectory:
        return linear_ramp_trajectory(self.time_grid, self.lambda_0, self.lambda_T)


def build_problem(pot: BoxPotential, params: PhysicalParams, grid: SpatialGrid,
                  time_grid: TimeGrid, lambda_0: float, lambda_T: float,
                  kind: CostKind = CostKind.ENERGY, gamma_reg: float = 1e-5,
                  stepper: NpseStepperConfig | None = None,
                  gs_cfg: GroundStateConfig = GroundStateConfig()) -> ControlProblem:
    """Initial state and target from the ground states at both wall positions."""
    gs0 = ground_state(pot, lambda_0, params, grid, gs_cfg)
    gs_des = ground_state(pot, lambda_T, params, grid, gs_cfg)
    spec = CostSpec(kind, gs_des.psi0, gamma_reg, gs_des.energy)
    return ControlProblem(pot, params, grid, time_grid, gs0.psi0, spec, float(lambda_0),
                          float(lambda_T), stepper or NpseStepperConfig())


@dataclass
class Evaluation:
    control: ControlTrajectory
    cost: float
    propagation: Propagation
    v_table: np.ndarray


def evaluate_cost(control: ControlTrajectory, problem: ControlProblem) -> Evaluation:
    if control.time_grid != problem.time_grid:
        raise ValueError("control is not defined on the problem's time grid")
    v = potential_table(problem.pot, problem.grid, control.samples)
    prop = propagate_values(problem.psi0, v, problem.params, problem.grid,
                            problem.time_grid.dt, problem.stepper)
    j = cost(prop.final, problem.spec, control, problem.pot, problem.params, problem.grid)
    return Evaluation(control, j, prop, v)


def both_costs(control: ControlTrajectory, problem: ControlProblem) -> tuple[float, float]:
    """(J_e, J_s) of a trajectory, sharing one forward run."""
    ev = evaluate_cost(control, problem)
    return costs_of_final(ev.propagation.final, control, problem)


def terminal_costs(psi_T, problem: ControlProblem) -> tuple[float, float]:
    """Energy excess over the target and state error, without regularization."""
    spec = problem.spec
    de = total_energy(psi_T, problem.pot, problem.lambda_T, problem.params, problem.grid) - spec.j_e_des
    return de, state_error(psi_T, spec.psi_des, problem.grid)


def costs_of_final(psi_T, control, problem) -> tuple[float, float]:
    """(J_e, J_s) including the regularization of ``control``."""
    reg = regularization_term(control, problem.spec.gamma_reg)
    de, err = terminal_costs(psi_T, problem)
    return de + reg, err + reg


# --- H^1 gradient --------------------------------------------------------

def field_coupling(evaluation: Evaluation, problem: ControlProblem) -> np.ndarray:
    """Per-node counterpart of Re int conj(psi) dV/dlam p dz from one backward sweep.

    Defined so that ``gamma * lam'' + field_coupling`` is the Poisson source.
    """
    ctrl = evaluation.control
    p_T = terminal_adjoint(evaluation.propagation.final, problem.spec, problem.pot,
                           ctrl.lambda_T, problem.params, problem.grid)
    dv = dlambda_table(problem.pot, problem.grid, ctrl.samples)
    dterm, _ = adjoint_sweep(evaluation.propagation.levels, evaluation.v_table, dv, p_T,
                             problem.params, problem.grid, problem.time_grid.dt)
    return -dterm / problem.time_grid.dt


def gradient_source(coupling: np.ndarray, control: ControlTrajectory, gamma_reg: float) -> np.ndarray:
    """Right-hand side gamma * lam'' + coupling of the Poisson problem (interior nodes)."""
    s = control.samples
    dt = control.time_grid.dt
    if coupling.shape != s.shape:
        raise ValueError("coupling and control sample counts differ")
    src = np.zeros_like(s)
    src[1:-1] = gamma_reg * (s[2:] - 2 * s[1:-1] + s[:-2]) / dt**2 + coupling[1:-1]
    return src


def solve_h1_gradient(source: np.ndarray, time_grid: TimeGrid) -> np.ndarray:
    """Solve G'' = source with G(0) = G(T) = 0 on the three-point stencil."""
    source = np.asarray(source, dtype=float)
    if source.shape != (time_grid.n_t + 1,):
        raise ValueError("source must live on all time nodes")
    n = time_grid.n_t - 1
    dt2 = time_grid.dt ** 2
    out = np.zeros(time_grid.n_t + 1)
    out[1:-1] = _kernels.thomas(np.ones(n), np.full(n, -2.0), np.ones(n), source[1:-1] * dt2)
    return out


def h1_inner(a: np.ndarray, b: np.ndarray, time_grid: TimeGrid) -> float:
    """Discrete int a' b' dt for nodal functions (exact for piecewise-linear)."""
    return float(np.dot(np.diff(a), np.diff(b)) / time_grid.dt)


def h1_norm(a, time_grid) -> float:
    return math.sqrt(max(h1_inner(a, a, time_grid), 0.0))


def euclidean_gradient(evaluation: Evaluation, problem: ControlProblem) -> np.ndarray:
    """dJ/d(lam_k) for every sample; endpoint entries are zeroed (pinned)."""
    dt = problem.time_grid.dt
    g = -field_coupling(evaluation, problem) * dt
    g += regularization_gradient(evaluation.control, problem.spec.gamma_reg)
    g[0] = g[-1] = 0.0
    return g


def evaluate_cost_and_gradient(control: ControlTrajectory, problem: ControlProblem):
    """Forward run, terminal condition, backward run, Poisson solve.

    Returns ``(cost, h1_gradient)``; the gradient vanishes at both ends.
    """
    ev = evaluate_cost(control, problem)
    coupling = field_coupling(ev, problem)
    src = gradient_source(coupling, control, problem.spec.gamma_reg)
    return ev.cost, solve_h1_gradient(src, problem.time_grid)


# --- BFGS ----------------------------------------------------------------

@dataclass(frozen=True)
class StopCriteria:
    gtol: float = 1e-6
    max_iter: int = 1000
    c1: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 40


@dataclass
class OptimizationReport:
    best_control: ControlTrajectory
    cost_history: list
    grad_norm_history: list
    iterations: int
    converged: bool
    wall_time: float
    message: str = ""
    n_cost_evals: int = 0
    n_grad_evals: int = 0
    log_rows: list = field(default_factory=list)
    coefficients: np.ndarray | None = None

    @property
    def final_cost(self) -> float:
        return self.cost_history[-1]

    def write_log_csv(self, path, comment: str | None = None) -> None:
        with open(path, "w") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            fh.write("iteration,cost,grad_norm,step,wall_time\n")
            for row in self.log_rows:
                fh.write("{},{:.17g},{:.17g},{:.17g},{:.6f}\n".format(*row))


@dataclass
class _BfgsResult:
    x: np.ndarray
    f: float
    costs: list
    gnorms: list
    iterations: int
    converged: bool
    message: str
    n_f: int
    n_g: int
    rows: list


def bfgs(fun: Callable[[np.ndarray], float], grad: Callable[[np.ndarray], np.ndarray],
         x0: np.ndarray, metric_inv: Callable[[np.ndarray], np.ndarray],
         stop: StopCriteria, callback: Callable | None = None) -> _BfgsResult:
    """BFGS with Armijo backtracking in the metric whose inverse is ``metric_inv``.

    ``grad`` returns the Euclidean gradient; ``metric_inv`` maps it to the
    Riesz representative (identity for plain BFGS). Full memory via the
    two-loop recursion.
    """
    t0 = time.perf_counter()
    x = np.array(x0, dtype=float)
    f = fun(x)
    g = grad(x)
    n_f, n_g = 1, 1
    rg = metric_inv(g)
    gnorm = math.sqrt(max(float(g @ rg), 0.0))
    costs, gnorms = [f], [gnorm]
    rows = [(0, f, gnorm, 0.0, time.perf_counter() - t0)]
    s_hist, y_hist, rho_hist = [], [], []
    gamma0 = 1.0 / gnorm if gnorm > 0 else 1.0
    it = 0
    message = "max iterations reached"
    converged = False
    if gnorm <= stop.gtol:
        return _BfgsResult(x, f, costs, gnorms, 0, True, "gradient tolerance met", n_f, n_g, rows)
    while it < stop.max_iter:
        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y, r in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
            a = r * float(s @ q)
            alphas.append(a)
            q -= a * y
        d = gamma0 * metric_inv(q)
        for (s, y, r), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
            b = r * float(y @ d)
            d += (a - b) * s
        d = -d
        slope = float(g @ d)
        if not slope < 0:
            log.info("bfgs: non-descent direction, resetting memory")
            s_hist.clear(), y_hist.clear(), rho_hist.clear()
            gamma0 = 1.0 / gnorm
            d = -gamma0 * rg
            slope = float(g @ d)
        step = 1.0
        accepted = False
        for _ in range(stop.max_backtracks):
            x_new = x + step * d
            try:
                f_new = fun(x_new)
            except Exception as exc:  # a blown-up trial step counts as a failed trial
                log.debug("bfgs: trial failed (%s), backtracking", exc)
                f_new = math.inf
            n_f += 1
            if f_new <= f + stop.c1 * step * slope:
                accepted = True
                break
            step *= stop.backtrack
        if not accepted:
            message = "line search failed"
            break
        g_new = grad(x_new)
        n_g += 1
        s_vec = x_new - x
        y_vec = g_new - g
        sy = float(s_vec @ y_vec)
        if sy > 1e-12 * math.sqrt(float(s_vec @ s_vec) * float(y_vec @ y_vec)):
            if not s_hist:
                gamma0 = sy / float(y_vec @ metric_inv(y_vec))
            s_hist.append(s_vec)
            y_hist.append(y_vec)
            rho_hist.append(1.0 / sy)
        x, f, g = x_new, f_new, g_new
        rg = metric_inv(g)
        gnorm = math.sqrt(max(float(g @ rg), 0.0))
        it += 1
        costs.append(f)
        gnorms.append(gnorm)
        rows.append((it, f, gnorm, step, time.perf_counter() - t0))
        log.info("iter %4d  J=%.6e  |grad|=%.3e  step=%.3g", it, f, gnorm, step)
        if callback is not None:
            callback(it, x, f, gnorm)
        if gnorm <= stop.gtol:
            message = "gradient tolerance met"
            converged = True
            break
    return _BfgsResult(x, f, costs, gnorms, it, converged, message, n_f, n_g, rows)


class _IoaObjective:
    """Caches the last forward run so the gradient reuses it."""

    def __init__(self, template: ControlTrajectory, problem: ControlProblem):
        self.template = template
        self.problem = problem
        self.last: Evaluation | None = None

    def control(self, x):
        return self.template.with_interior(x)

    def fun(self, x):
        self.last = evaluate_cost(self.control(x), self.problem)
        return self.last.cost

    def grad(self, x):
        if self.last is None or not np.array_equal(self.last.control.samples[1:-1], x):
            self.fun(x)
        return euclidean_gradient(self.last, self.problem)[1:-1]


def h1_metric_inverse(time_grid: TimeGrid) -> Callable[[np.ndarray], np.ndarray]:
    """Map an interior Euclidean gradient to its H^1 representative."""
    dt = time_grid.dt

    def apply(g_interior):
        src = np.zeros(time_grid.n_t + 1)
        src[1:-1] = -g_interior / dt
        return solve_h1_gradient(src, time_grid)[1:-1]

    return apply


def optimize_ioa(initial: ControlTrajectory, problem: ControlProblem,
                 stop: StopCriteria = StopCriteria(), callback=None) -> OptimizationReport:
    """BFGS on the interior control samples with adjoint H^1 gradients."""
    if initial.lambda_0 != problem.lambda_0 or initial.lambda_T != problem.lambda_T:
        raise ValueError("initial trajectory must satisfy the pinned endpoints")
    obj = _IoaObjective(initial, problem)
    t0 = time.perf_counter()
    res = bfgs(obj.fun, obj.grad, initial.samples[1:-1], h1_metric_inverse(problem.time_grid),
               stop, callback)
    return OptimizationReport(
        best_control=obj.control(res.x), cost_history=res.costs, grad_norm_history=res.gnorms,
        iterations=res.iterations, converged=res.converged,
        wall_time=time.perf_counter() - t0, message=res.message, n_cost_evals=res.n_f,
        n_grad_evals=res.n_g, log_rows=res.rows)


def optimize_bfa(initial_coeffs, problem: ControlProblem, stop: StopCriteria = StopCriteria(),
                 fd_step: float = 1e-6, callback=None) -> OptimizationReport:
    """Derivative-free quasi-Newton over sine-series coefficients.

    Gradients are forward differences of the cost (one forward run per
    coefficient); no adjoint information is used.
    """
    a0 = np.atleast_1d(np.asarray(initial_coeffs, dtype=float))
    if a0.ndim != 1 or a0.size < 1:
        raise ValueError("need at least one coefficient")
    tg = problem.time_grid
    cache: dict = {}

    def fun(a):
        key = a.tobytes()
        if key not in cache:
            ctrl = bfa_trajectory(a, tg, problem.lambda_0, problem.lambda_T)
            cache[key] = evaluate_cost(ctrl, problem).cost
        return cache[key]

    def grad(a):
        f0 = fun(a)
        g = np.empty_like(a)
        for i in range(a.size):
            e = a.copy()
            e[i] += fd_step
            g[i] = (fun(e) - f0) / fd_step
        return g

    t0 = time.perf_counter()
    res = bfgs(fun, grad, a0, lambda v: v, stop, callback)
    n_f = res.n_f + res.n_g * a0.size
    return OptimizationReport(
        best_control=bfa_trajectory(res.x, tg, problem.lambda_0, problem.lambda_T),
        cost_history=res.costs, grad_norm_history=res.gnorms, iterations=res.iterations,
        converged=res.converged, wall_time=time.perf_counter() - t0, message=res.message,
        n_cost_evals=n_f, n_grad_evals=res.n_g, log_rows=res.rows, coefficients=res.x)


def sweep_bfa_order(orders, problem: ControlProblem, stop: StopCriteria = StopCriteria(),
                    fd_step: float = 1e-6) -> list[tuple[int, float, int, OptimizationReport]]:
    """Run :func:`optimize_bfa` per basis size, warm-starting from the previous optimum."""
    rows = []
    best = np.zeros(0)
    for m in orders:
        if m < 1:
            raise ValueError("basis orders must be >= 1")
        start = np.zeros(m)
        k = min(m, best.size)
        start[:k] = best[:k]
        rep = optimize_bfa(start, problem, stop, fd_step)
        best = rep.coefficients
        rows.append((m, rep.final_cost, rep.iterations, rep))
    return rows


def error_evolution(control: ControlTrajectory, problem: ControlProblem, hold: float = 0.0):
    """State error 1/2 (1 - |<psi_des, psi(t)>|^2) along the run, optionally
    continuing with the wall held at ``lambda_T`` for ``hold`` ms."""
    tg = problem.time_grid
    n_hold = int(round(hold / tg.dt))
    samples = np.concatenate([control.samples, np.full(n_hold, control.lambda_T)])
    v = potential_table(problem.pot, problem.grid, samples)
    prop = propagate_values(problem.psi0, v, problem.params, problem.grid, tg.dt, problem.stepper)
    err = np.array([state_error(psi, problem.spec.psi_des, problem.grid) for psi in prop.levels])
    return prop.t, err, prop
