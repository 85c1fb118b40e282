"""Cost functionals and the backward (adjoint) sweep.

The adjoint is the exact transpose of the discrete forward scheme in
:mod:`npsecontrol.dynamics`, so the resulting gradients agree with finite
differences of the discrete cost to round-off. In the continuum limit it
reduces to

    i dp/dt = (-1/(2m) d^2/dz^2 + V + A(psi)) p + B(psi) conj(p),

with the terminal data of :func:`terminal_adjoint_state` or
:func:`terminal_adjoint_energy`.

Conventions: ``p = i q`` where ``q`` is the (negated) L2 gradient carried
backward by the transposed step; the multiplier of the step from level ``n``
to ``n+1`` is ``mu_n``, approximately the average of ``q_n`` and ``q_{n+1}``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import PhysicalParams, SpatialGrid, overlap, second_derivative
from .dynamics import kinetic_weight, total_energy
from .potential import ControlTrajectory


class CostKind(enum.Enum):
    STATE = "state"
    ENERGY = "energy"


@dataclass(frozen=True)
class CostSpec:
    kind: CostKind
    psi_des: np.ndarray
    gamma_reg: float = 1e-5
    j_e_des: float | None = None

    def __post_init__(self):
        if self.gamma_reg < 0:
            raise ValueError("gamma_reg must be non-negative")
        if self.kind is CostKind.ENERGY and self.j_e_des is None:
            raise ValueError("energy cost needs j_e_des")


def regularization_term(control: ControlTrajectory, gamma_reg: float) -> float:
    """gamma/2 * integral of (d lam/dt)^2, with lam piecewise linear between nodes."""
    dt = control.time_grid.dt
    slope = np.diff(control.samples) / dt
    return 0.5 * gamma_reg * float(np.sum(slope**2) * dt)


def regularization_gradient(control: ControlTrajectory, gamma_reg: float) -> np.ndarray:
    """Derivative of :func:`regularization_term` with respect to every sample."""
    s = control.samples
    dt = control.time_grid.dt
    g = np.zeros_like(s)
    d = np.diff(s)
    g[:-1] -= d
    g[1:] += d
    return gamma_reg * g / dt


def state_error(psi, psi_des, grid: SpatialGrid) -> float:
    """1/2 (1 - |<psi_des, psi>|^2)."""
    return 0.5 * (1.0 - abs(overlap(psi_des, psi, grid)) ** 2)


def cost_state(psi_T, spec: CostSpec, control: ControlTrajectory, grid: SpatialGrid) -> float:
    if spec.kind is not CostKind.STATE:
        raise ValueError("cost_state needs a STATE cost spec")
    return state_error(psi_T, spec.psi_des, grid) + regularization_term(control, spec.gamma_reg)


def cost_energy(psi_T, spec: CostSpec, control: ControlTrajectory, pot, params: PhysicalParams,
                grid: SpatialGrid) -> float:
    if spec.j_e_des is None:
        raise ValueError("cost_energy needs j_e_des")
    return (total_energy(psi_T, pot, control.lambda_T, params, grid) - spec.j_e_des
            + regularization_term(control, spec.gamma_reg))


def cost(psi_T, spec: CostSpec, control, pot, params, grid) -> float:
    if spec.kind is CostKind.STATE:
        return cost_state(psi_T, spec, control, grid)
    return cost_energy(psi_T, spec, control, pot, params, grid)


def coeff_A(rho, params: PhysicalParams):
    """Real coefficient of p in the linearized nonlinearity."""
    rho = np.asarray(rho, dtype=float)
    g, w = params.coupling, params.omega_perp
    q = 1 + 2 * g * rho
    out = w * ((1 + 6 * g * rho) / np.sqrt(q) - 1 - (1 + 3 * g * rho) * g * rho / q**1.5)
    return float(out) if out.ndim == 0 else out


def coeff_B(psi, params: PhysicalParams):
    """Coefficient of conj(p); carries the phase of psi**2."""
    psi = np.asarray(psi, dtype=complex)
    g, w = params.coupling, params.omega_perp
    rho = np.abs(psi) ** 2
    q = 1 + 2 * g * rho
    out = w * (3 * g * psi**2 / np.sqrt(q) - (1 + 3 * g * rho) * g * psi**2 / q**1.5)
    return complex(out) if out.ndim == 0 else out


def terminal_adjoint_state(psi_T, psi_des, grid: SpatialGrid) -> np.ndarray:
    """p(T) = i psi_des <psi_des, psi_T>."""
    return 1j * np.asarray(psi_des) * overlap(psi_des, psi_T, grid)


def terminal_adjoint_energy(psi_T, pot, lam_T, params: PhysicalParams, grid: SpatialGrid) -> np.ndarray:
    """p(T) = -2i [-(1/2m) d_zz + V + w((1 + 3 g rho)/sqrt(1 + 2 g rho) + 1)] psi_T.

    The constant ``+w`` only adds a multiple of ``i psi_T``; it is orthogonal
    to every norm-preserving variation and leaves the gradient unchanged.
    """
    psi = np.asarray(psi_T, dtype=complex)
    rho = np.abs(psi) ** 2
    g = params.coupling
    bracket = (-second_derivative(psi, grid.dz) / (2 * params.m)
               + (pot.value(grid.z, lam_T)
                  + params.omega_perp * ((1 + 3 * g * rho) / np.sqrt(1 + 2 * g * rho) + 1)) * psi)
    p = -2j * bracket
    p[0] = p[-1] = 0.0
    return p


def terminal_adjoint(psi_T, spec: CostSpec, pot, lam_T, params, grid) -> np.ndarray:
    if spec.kind is CostKind.STATE:
        return terminal_adjoint_state(psi_T, spec.psi_des, grid)
    return terminal_adjoint_energy(psi_T, pot, lam_T, params, grid)


def step_adjoint_backward(p, psi_n, psi_nm1, v_n, v_nm1, params: PhysicalParams,
                          grid: SpatialGrid, dt: float):
    """Carry the adjoint from level ``n`` to ``n-1``.

    ``v_n`` and ``v_nm1`` are the potentials (nodal arrays) at the two levels.
    Returns ``(p_nm1, mu)`` where ``mu`` is the interval multiplier entering the
    control gradient.
    """
    q = np.ascontiguousarray(-1j * np.asarray(p, dtype=complex))
    q_lo, mu = _kernels.adjoint_step(
        q, np.ascontiguousarray(psi_nm1, dtype=complex), np.ascontiguousarray(psi_n, dtype=complex),
        np.ascontiguousarray(v_nm1, dtype=float), np.ascontiguousarray(v_n, dtype=float),
        kinetic_weight(params, grid), params.omega_perp, params.coupling, dt)
    return 1j * q_lo, mu


def adjoint_sweep(levels, v_table, dv_table, p_T, params: PhysicalParams, grid: SpatialGrid,
                  dt: float):
    """Full backward pass.

    Returns ``(coupling, p_0)``: ``coupling[k]`` is the derivative of the
    terminal cost with respect to control sample ``k`` (endpoints included),
    and ``p_0`` the adjoint transported to ``t = 0``.
    """
    q_T = np.ascontiguousarray(-1j * np.asarray(p_T, dtype=complex))
    grad, q0 = _kernels.adjoint_sweep(
        np.ascontiguousarray(levels), np.ascontiguousarray(v_table),
        np.ascontiguousarray(dv_table), q_T, kinetic_weight(params, grid),
        params.omega_perp, params.coupling, dt, grid.dz)
    return grad, 1j * q0

