import math

import numpy as np
import pytest

from npsecontrol.adjoint import (CostKind, CostSpec, coeff_A, coeff_B, cost_energy, cost_state,
                                 regularization_gradient, regularization_term, state_error,
                                 step_adjoint_backward, terminal_adjoint_energy,
                                 terminal_adjoint_state)
from npsecontrol.core import make_spatial_grid, make_time_grid, norm_squared, overlap
from npsecontrol.dynamics import nonlinear_term
from npsecontrol.potential import BoxPotential, constant_trajectory, linear_ramp_trajectory


class Zero:
    def value(self, z, lam):
        return np.zeros_like(np.asarray(z, dtype=float))


def random_field(rng, grid, scale=1.0):
    psi = np.zeros(grid.n_z, complex)
    psi[1:-1] = scale * (rng.standard_normal(grid.n_z - 2) + 1j * rng.standard_normal(grid.n_z - 2))
    return psi


# --- linearization coefficients -------------------------------------------

def test_linearization_identity(params, rng):
    """A xi + B conj(xi) is the derivative of N(|psi|^2) psi along xi."""
    def f(psi):
        return nonlinear_term(abs(psi) ** 2, params) * psi

    h = 1e-6
    for rho in rng.uniform(0.0, 0.05, 100):
        psi = math.sqrt(rho) * np.exp(1j * rng.uniform(0, 2 * np.pi))
        xi = complex(rng.standard_normal(), rng.standard_normal())
        fd = (f(psi + h * xi) - f(psi - h * xi)) / (2 * h)
        lin = coeff_A(rho, params) * xi + coeff_B(psi, params) * np.conj(xi)
        assert abs(lin - fd) <= 1e-6 * max(abs(fd), 1e-12)


def test_coefficient_limits(params, linear_params):
    assert coeff_A(0.0, params) == 0.0
    assert coeff_B(0.0, params) == 0.0
    assert np.all(coeff_A(np.linspace(0, 1, 7), linear_params) == 0)
    assert coeff_B(0.3 + 0.1j, linear_params) == 0


def test_coeff_B_phase_covariance(params, rng):
    for _ in range(20):
        psi = complex(*rng.uniform(-0.2, 0.2, 2))
        th = rng.uniform(0, 2 * np.pi)
        assert coeff_B(np.exp(1j * th) * psi, params) == pytest.approx(
            np.exp(2j * th) * coeff_B(psi, params), rel=1e-12, abs=1e-15)
    assert isinstance(coeff_A(0.02, params), float)


# --- terminal conditions --------------------------------------------------

def test_terminal_state(coarse_problem, rng):
    grid = coarse_problem.grid
    des = coarse_problem.spec.psi_des
    assert np.allclose(terminal_adjoint_state(des, des, grid), 1j * des, atol=1e-14)
    other = random_field(rng, grid)
    other -= overlap(des, other, grid) * des
    assert np.max(np.abs(terminal_adjoint_state(other, des, grid))) < 1e-13
    psi = random_field(rng, grid)
    assert np.allclose(terminal_adjoint_state(2.5 * psi, des, grid),
                       2.5 * terminal_adjoint_state(psi, des, grid), rtol=1e-13)


def test_terminal_energy_zero_field(params, box):
    grid = make_spatial_grid(120.0, 64)
    assert np.all(terminal_adjoint_energy(np.zeros(64, complex), box, 10.0, params, grid) == 0)


def test_terminal_energy_linear_eigenmode(linear_params):
    grid = make_spatial_grid(100.0, 200)
    j = np.arange(grid.n_z)
    theta = math.pi / (grid.n_z - 1)
    psi = np.sin(theta * j).astype(complex)
    e1 = (1 - math.cos(theta)) / (linear_params.m * grid.dz**2)  # stencil eigenvalue
    p = terminal_adjoint_energy(psi, Zero(), 0.0, linear_params, grid)
    assert np.allclose(p, -2j * (e1 + 2 * linear_params.omega_perp) * psi, rtol=1e-10, atol=1e-13)


# --- backward stepping ----------------------------------------------------

def test_linear_adjoint_conserves_norm(linear_params, box, rng):
    grid = make_spatial_grid(120.0, 128)
    v = box.value(grid.z, 5.0)
    psi = random_field(rng, grid, 0.1)
    p = random_field(rng, grid)
    n0 = norm_squared(p, grid)
    for _ in range(1000):
        p, _ = step_adjoint_backward(p, psi, psi, v, v, linear_params, grid, 0.01)
    assert abs(norm_squared(p, grid) / n0 - 1) <= 1e-8
    assert p[0] == 0 and p[-1] == 0


def test_adjoint_step_real_linearity(params, box, rng):
    grid = make_spatial_grid(120.0, 128)
    psi_a = random_field(rng, grid, 0.1)
    psi_b = random_field(rng, grid, 0.1)
    v0, v1 = box.value(grid.z, 5.0), box.value(grid.z, 5.1)
    p = random_field(rng, grid)
    one, _ = step_adjoint_backward(p, psi_b, psi_a, v1, v0, params, grid, 0.01)
    three, _ = step_adjoint_backward(-3.0 * p, psi_b, psi_a, v1, v0, params, grid, 0.01)
    assert np.allclose(three, -3.0 * one, rtol=1e-12, atol=1e-13)


# --- costs ----------------------------------------------------------------

def test_regularization_examples():
    tg = make_time_grid(45.0, 450)
    assert regularization_term(constant_trajectory(tg, 3.0), 1e-5) == 0.0
    ramp = linear_ramp_trajectory(tg, 0.0, 37.5)
    assert regularization_term(ramp, 1e-5) == pytest.approx(0.5e-5 * 37.5**2 / 45.0, rel=1e-12)
    assert regularization_term(ramp, 2e-5) == pytest.approx(2 * regularization_term(ramp, 1e-5), rel=1e-14)


def test_regularization_gradient_matches_difference(rng):
    tg = make_time_grid(5.0, 50)
    ctrl = linear_ramp_trajectory(tg, 0.0, 10.0).with_interior(rng.uniform(0, 10, 49))
    g = regularization_gradient(ctrl, 0.3)
    h = 1e-6
    for k in (0, 7, 25, 50):
        s = ctrl.samples.copy()
        s[k] += h
        up = regularization_term(type(ctrl)(s, tg), 0.3)
        s[k] -= 2 * h
        dn = regularization_term(type(ctrl)(s, tg), 0.3)
        assert g[k] == pytest.approx((up - dn) / (2 * h), rel=1e-6)


def test_state_cost_examples(coarse_problem, rng):
    grid = coarse_problem.grid
    des = coarse_problem.spec.psi_des
    spec = CostSpec(CostKind.STATE, des)
    const = constant_trajectory(coarse_problem.time_grid, coarse_problem.lambda_T)
    assert cost_state(des, spec, const, grid) == pytest.approx(0.0, abs=1e-14)
    for th in rng.uniform(0, 2 * np.pi, 5):
        assert state_error(np.exp(1j * th) * des, des, grid) == pytest.approx(0.0, abs=1e-14)
    orth = random_field(rng, grid)
    orth -= overlap(des, orth, grid) * des
    orth /= math.sqrt(norm_squared(orth, grid))
    assert cost_state(orth, spec, const, grid) == pytest.approx(0.5, abs=1e-13)
    with pytest.raises(ValueError):
        cost_state(des, coarse_problem.spec, const, grid)  # energy spec


def test_energy_cost_examples(coarse_problem, rng):
    pr = coarse_problem
    des = pr.spec.psi_des
    const = constant_trajectory(pr.time_grid, pr.lambda_T)
    assert cost_energy(des, pr.spec, const, pr.pot, pr.params, pr.grid) == pytest.approx(0.0, abs=1e-12)
    excited = des * (1 + 0.1 * np.cos(pr.grid.z))
    excited /= math.sqrt(norm_squared(excited, pr.grid))
    assert cost_energy(excited, pr.spec, const, pr.pot, pr.params, pr.grid) > 0


def test_costs_vanish_near_target(coarse_problem, rng):
    pr = coarse_problem
    des = pr.spec.psi_des
    grid = pr.grid
    d = random_field(rng, grid)
    d -= overlap(des, d, grid) * des
    d /= math.sqrt(norm_squared(d, grid))
    eps = math.sqrt(1e-10)
    psi = math.sqrt(1 - eps**2) * des + eps * d  # fidelity 1 - 1e-10
    assert abs(overlap(des, psi, grid)) ** 2 >= 1 - 1.0001e-10
    const = constant_trajectory(pr.time_grid, pr.lambda_T)
    spec_s = CostSpec(CostKind.STATE, des)
    assert cost_state(psi, spec_s, const, grid) <= 1e-8
    # a smooth deviation keeps the energy excess at the fidelity-loss scale
    smooth = des * np.cos(pr.grid.z / 3)
    smooth -= overlap(des, smooth, grid) * des
    smooth /= math.sqrt(norm_squared(smooth, grid))
    psi = math.sqrt(1 - eps**2) * des + eps * smooth
    assert 0 <= cost_energy(psi, pr.spec, const, pr.pot, pr.params, grid) <= 1e-8


def test_cost_spec_validation(coarse_problem):
    with pytest.raises(ValueError):
        CostSpec(CostKind.ENERGY, coarse_problem.spec.psi_des)
    with pytest.raises(ValueError):
        CostSpec(CostKind.STATE, coarse_problem.spec.psi_des, gamma_reg=-1.0)
