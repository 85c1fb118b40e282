"""Forward propagation of the non-polynomial Schroedinger equation.

Time stepping is a Crank-Nicolson scheme,

    (1 + i dt/2 Hbar) psi_{n+1} = (1 - i dt/2 Hbar) psi_n,

where ``Hbar`` uses the mean of the potentials at both time levels and, for
the nonlinearity, the mean of N(rho) over the interval between the old and new
densities (the divided difference of the interaction energy). Because ``Hbar``
is Hermitian the step is an exact Cayley transform, so the discrete norm is
conserved; for static potentials the discrete energy is conserved as well.
The implicit density dependence is resolved by fixed-point iteration.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal, solve_banded

from . import _kernels
from .core import (PhysicalParams, SolverError, SpatialGrid, norm_squared,
                   normalize, second_derivative)
from .potential import ControlTrajectory

log = logging.getLogger(__name__)


def nonlinear_term(rho, params: PhysicalParams):
    """omega_perp * ((1 + 3 g rho) / sqrt(1 + 2 g rho) - 1) with g = a_s N."""
    rho = np.asarray(rho, dtype=float)
    g = params.coupling
    out = params.omega_perp * ((1 + 3 * g * rho) / np.sqrt(1 + 2 * g * rho) - 1)
    return float(out) if out.ndim == 0 else out


def nonlinear_slope(rho, params: PhysicalParams):
    """Derivative of :func:`nonlinear_term` with respect to the density."""
    rho = np.asarray(rho, dtype=float)
    g = params.coupling
    q = 1 + 2 * g * rho
    out = params.omega_perp * (3 * g / np.sqrt(q) - (1 + 3 * g * rho) * g / q**1.5)
    return float(out) if out.ndim == 0 else out


def energy_density_interaction(rho, params: PhysicalParams):
    return params.omega_perp * np.sqrt(1 + 2 * params.coupling * rho) * rho


@dataclass(frozen=True)
class NpseStepperConfig:
    fixed_point_tol: float = 1e-12
    max_fixed_point_iters: int = 50

    def __post_init__(self):
        if not self.fixed_point_tol > 0:
            raise ValueError("fixed_point_tol must be positive")
        if self.max_fixed_point_iters < 1:
            raise ValueError("max_fixed_point_iters must be >= 1")


def kinetic_weight(params: PhysicalParams, grid: SpatialGrid) -> float:
    return 1.0 / (2.0 * params.m * grid.dz**2)


def _raise_status(status: int, step: int, its: int) -> None:
    if status == _kernels.STATUS_NAN:
        raise SolverError(f"non-finite values in step {step}")
    if status == _kernels.STATUS_NO_CONVERGENCE:
        raise SolverError(
            f"fixed-point iteration did not converge in step {step} after {its} "
            "iterations; reduce dt")


def step_forward_values(psi, v_old, v_new, params: PhysicalParams, grid: SpatialGrid,
                        dt: float, cfg: NpseStepperConfig = NpseStepperConfig()):
    """One step with the potential given as nodal arrays at both time levels."""
    psi = np.ascontiguousarray(psi, dtype=np.complex128)
    out, its, status = _kernels.cn_step(
        psi, np.ascontiguousarray(v_old, dtype=float), np.ascontiguousarray(v_new, dtype=float),
        kinetic_weight(params, grid), params.omega_perp, params.coupling, dt,
        cfg.fixed_point_tol, cfg.max_fixed_point_iters)
    _raise_status(status, 0, its)
    return out


def step_forward(psi, lam_n, lam_np1, pot, params, grid, dt,
                 cfg: NpseStepperConfig = NpseStepperConfig()):
    return step_forward_values(psi, pot.value(grid.z, lam_n), pot.value(grid.z, lam_np1),
                               params, grid, dt, cfg)


def potential_table(pot, grid: SpatialGrid, samples) -> np.ndarray:
    """Potential at every (time level, node); shape (len(samples), n_z)."""
    return pot.value(grid.z[None, :], np.asarray(samples, dtype=float)[:, None])


def dlambda_table(pot, grid: SpatialGrid, samples) -> np.ndarray:
    return pot.dlambda(grid.z[None, :], np.asarray(samples, dtype=float)[:, None])


@dataclass
class Propagation:
    t: np.ndarray
    levels: np.ndarray  # every time level, shape (n_t + 1, n_z)
    max_fixed_point_iters: int

    @property
    def final(self) -> np.ndarray:
        return self.levels[-1]

    def snapshots(self, record_every: int = 1):
        """Times and states at the given stride; the last level is always included."""
        if record_every < 1:
            raise ValueError("record_every must be >= 1")
        idx = list(range(0, len(self.t), record_every))
        if idx[-1] != len(self.t) - 1:
            idx.append(len(self.t) - 1)
        return self.t[idx], self.levels[idx]


def propagate_values(psi0, v_table, params, grid, dt, cfg=NpseStepperConfig()) -> Propagation:
    levels, worst, status, failed = _kernels.cn_propagate(
        np.ascontiguousarray(psi0, dtype=np.complex128), np.ascontiguousarray(v_table),
        kinetic_weight(params, grid), params.omega_perp, params.coupling, dt,
        cfg.fixed_point_tol, cfg.max_fixed_point_iters)
    _raise_status(status, failed, worst)
    return Propagation(np.arange(len(v_table)) * dt, levels, int(worst))


def propagate(psi0, control: ControlTrajectory, pot, params, grid,
              cfg: NpseStepperConfig = NpseStepperConfig()) -> Propagation:
    """Crank-Nicolson propagation along the control's time grid."""
    v = potential_table(pot, grid, control.samples)
    return propagate_values(psi0, v, params, grid, control.time_grid.dt, cfg)


# --- energies ------------------------------------------------------------

def hamiltonian_density(psi, pot, lam, params: PhysicalParams, grid: SpatialGrid) -> np.ndarray:
    """Pointwise energy density; the kinetic part is reduced to its real part."""
    psi = np.asarray(psi, dtype=complex)
    rho = np.abs(psi) ** 2
    kin = np.real(-np.conj(psi) * second_derivative(psi, grid.dz)) / (2 * params.m)
    return kin + pot.value(grid.z, lam) * rho + energy_density_interaction(rho, params)


def _trapz(f, grid):
    return float(grid.dz * (f.sum() - 0.5 * (f[0] + f[-1])))


def total_energy(psi, pot, lam, params, grid) -> float:
    return _trapz(hamiltonian_density(psi, pot, lam, params, grid), grid)


def apply_hamiltonian(psi, v, params: PhysicalParams, grid: SpatialGrid) -> np.ndarray:
    """The npSE right-hand side for a static potential array ``v``."""
    psi = np.asarray(psi, dtype=complex)
    out = (-second_derivative(psi, grid.dz) / (2 * params.m)
           + (v + nonlinear_term(np.abs(psi) ** 2, params)) * psi)
    out[0] = out[-1] = 0.0
    return out


def chemical_potential(psi, pot, lam, params, grid) -> float:
    hpsi = apply_hamiltonian(psi, pot.value(grid.z, lam), params, grid)
    return _trapz(np.real(np.conj(psi) * hpsi), grid) / norm_squared(psi, grid)


def stationary_residual(psi, mu, pot, lam, params, grid) -> float:
    """L2 norm of H psi - mu psi."""
    r = apply_hamiltonian(psi, pot.value(grid.z, lam), params, grid) - mu * np.asarray(psi)
    return math.sqrt(norm_squared(r, grid))


# --- ground state --------------------------------------------------------

@dataclass(frozen=True)
class GroundStateConfig:
    dtau: float = 1e-3
    dtau_max: float = 1.0
    energy_tol: float = 1e-12
    residual_tol: float = 1e-8
    max_imag_steps: int = 20000
    max_newton_iters: int = 50


@dataclass
class GroundStateResult:
    psi0: np.ndarray
    energy: float
    chem_potential: float
    iterations: int
    residual: float


def _thomas_fermi_guess(v, params, grid):
    """Density from N(rho) = mu - V, with mu fixed by normalization (bisection)."""
    w, g = params.omega_perp, params.coupling

    def rho_of(mu):
        x = np.clip(mu - v, 0.0, None) / w + 1.0  # (1 + 3 g r) / sqrt(1 + 2 g r) = x
        # with s = sqrt(1 + 2 g r): 3 s^2 - 2 x s - 1 = 0
        s = (x + np.sqrt(x * x + 3.0)) / 3.0
        return (s * s - 1.0) / (2.0 * g)

    lo, hi = float(v.min()), float(v.min()) + 1.0
    while _trapz(rho_of(hi), grid) < 1.0:
        hi = lo + 2 * (hi - lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _trapz(rho_of(mid), grid) < 1.0:
            lo = mid
        else:
            hi = mid
    rho = rho_of(hi)
    rho[0] = rho[-1] = 0.0
    return np.sqrt(rho)


def _energy_real(phi, v, params, grid):
    """Energy of a real interior vector (Dirichlet zeros implied)."""
    psi = np.zeros(grid.n_z)
    psi[1:-1] = phi
    rho = psi**2
    kin = -psi * second_derivative(psi, grid.dz) / (2 * params.m)
    return _trapz(kin + v * rho + energy_density_interaction(rho, params), grid)


def ground_state(pot, lam: float, params: PhysicalParams, grid: SpatialGrid,
                 cfg: GroundStateConfig = GroundStateConfig()) -> GroundStateResult:
    """Lowest-energy normalized stationary state of the potential at ``lam``.

    Backward-Euler imaginary-time steps with renormalization bring the state
    into the basin of the stationary solution; a bordered Newton iteration on
    ``(H(rho) - mu) psi = 0, ||psi|| = 1`` then polishes it to the residual
    tolerance. The state is real, so all work is done on real interior arrays.
    """
    v = np.asarray(pot.value(grid.z, lam), dtype=float)
    vi = v[1:-1]
    kin = kinetic_weight(params, grid)
    dz = grid.dz
    n = grid.n_z - 2

    def normalize_real(phi):
        return phi / math.sqrt(dz * np.dot(phi, phi))

    # start: lowest linear eigenvector, or the Thomas-Fermi profile when interacting
    if params.coupling > 0 and params.omega_perp > 0:
        phi = _thomas_fermi_guess(v, params, grid)[1:-1]
        # blend with a little of the linear ground state so the edges are smooth
        _, vec = eigh_tridiagonal(2 * kin + vi, -kin * np.ones(n - 1), select="i",
                                  select_range=(0, 0))
        lin = np.abs(vec[:, 0])
        phi = normalize_real(normalize_real(phi) + 1e-3 * normalize_real(lin))
    else:
        _, vec = eigh_tridiagonal(2 * kin + vi, -kin * np.ones(n - 1), select="i",
                                  select_range=(0, 0))
        phi = normalize_real(np.abs(vec[:, 0]))

    energy = _energy_real(phi, v, params, grid)
    dtau = cfg.dtau
    steps = 0
    ab = np.empty((3, n))
    ab[0, 1:] = -kin
    ab[2, :-1] = -kin
    ab[0, 0] = ab[2, -1] = 0.0
    # imaginary time until the energy settles coarsely; Newton does the rest
    while steps < cfg.max_imag_steps:
        steps += 1
        ab[1] = 1.0 + dtau * (2 * kin + vi + nonlinear_term(phi**2, params))
        ab[0, 1:] = -dtau * kin
        ab[2, :-1] = -dtau * kin
        trial = normalize_real(solve_banded((1, 1), ab, phi))
        e_new = _energy_real(trial, v, params, grid)
        if e_new > energy + 1e-15 * abs(energy):
            dtau *= 0.5
            if dtau < 1e-9:
                break
            continue
        change = abs(energy - e_new) / max(abs(e_new), 1e-300)
        phi, energy = trial, e_new
        if change < 1e-7:
            break
        dtau = min(2 * dtau, cfg.dtau_max)

    def residual_vec(phi, mu):
        rho = phi**2
        hphi = (2 * kin + vi + nonlinear_term(rho, params)) * phi
        hphi[1:] -= kin * phi[:-1]
        hphi[:-1] -= kin * phi[1:]
        return hphi - mu * phi

    def mu_of(phi):
        return float(np.dot(phi, residual_vec(phi, 0.0)) / np.dot(phi, phi))

    mu = mu_of(phi)
    res = math.sqrt(dz) * np.linalg.norm(residual_vec(phi, mu))
    newton = 0
    converged = False
    while newton < cfg.max_newton_iters:
        newton += 1
        rho = phi**2
        f1 = residual_vec(phi, mu)
        f2 = 0.5 * (dz * np.dot(phi, phi) - 1.0)
        jac = np.empty((3, n))
        jac[1] = 2 * kin + vi + nonlinear_term(rho, params) + 2 * rho * nonlinear_slope(rho, params) - mu
        jac[0, 1:] = -kin
        jac[2, :-1] = -kin
        jac[0, 0] = jac[2, -1] = 0.0
        sol = solve_banded((1, 1), jac, np.column_stack([f1, phi]))
        a, b = sol[:, 0], sol[:, 1]
        dmu = (dz * np.dot(phi, a) - f2) / (dz * np.dot(phi, b))
        dphi = -a + dmu * b
        step = 1.0
        while True:
            cand = phi + step * dphi
            cmu = mu + step * dmu
            cres = math.sqrt(dz) * np.linalg.norm(residual_vec(cand, cmu))
            if cres < res or step < 1e-4:
                break
            step *= 0.5
        phi = normalize_real(cand)
        e_new = _energy_real(phi, v, params, grid)
        mu = mu_of(phi)
        de = abs(e_new - energy) / max(abs(e_new), 1e-300)
        energy = e_new
        res = math.sqrt(dz) * np.linalg.norm(residual_vec(phi, mu))
        log.debug("newton %d: residual %.3e, dE %.3e", newton, res, de)
        if res < cfg.residual_tol and de < cfg.energy_tol:
            converged = True
            break
    if not converged:
        raise SolverError(
            f"ground state did not converge: residual {res:.3e} after {newton} Newton steps")

    psi = np.zeros(grid.n_z, dtype=complex)
    psi[1:-1] = phi if phi[n // 2] >= 0 else -phi
    psi = normalize(psi, grid)
    return GroundStateResult(
        psi0=psi,
        energy=total_energy(psi, pot, lam, params, grid),
        chem_potential=chemical_potential(psi, pot, lam, params, grid),
        iterations=steps + newton,
        residual=stationary_residual(psi, mu, pot, lam, params, grid),
    )


# --- sound speed and minimal control time --------------------------------

def speed_of_sound(rho, params: PhysicalParams):
    """Local speed of density excitations (um/ms)."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise ValueError("density must be non-negative")
    gr = params.coupling * rho
    c2 = params.omega_perp * gr * (2 + 3 * gr) / (params.m * (1 + 2 * gr) ** 1.5)
    out = np.sqrt(c2)
    return float(out) if out.ndim == 0 else out


def estimate_tmin(w0: float, r_comp: float, c_s0: float) -> float:
    """Time for an excitation launched at the walls to cross the mean box width."""
    if not c_s0 > 0:
        raise ValueError("c_s0 must be positive")
    return w0 / c_s0 * (1 + r_comp) / 2


def plateau_density(psi, grid: SpatialGrid, half_width: float = 10.0) -> float:
    """Mean density over ``|z| <= half_width`` around the box centre."""
    mask = np.abs(grid.z) <= half_width
    return float(np.mean(np.abs(psi[mask]) ** 2))


def write_carpet_csv(path, t, levels, grid: SpatialGrid, comment: str | None = None) -> None:
    """Density matrix: first row z, first column t, body rho(z, t)."""
    rho = np.abs(np.asarray(levels)) ** 2
    with open(path, "w") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        fh.write("t\\z," + ",".join(format(z, ".17g") for z in grid.z) + "\n")
        for ti, row in zip(t, rho):
            fh.write(format(ti, ".17g") + "," + ",".join(format(x, ".17g") for x in row) + "\n")
