import numpy as np
from scipy.linalg import solve_banded

from npsecontrol import _kernels


def test_thomas_matches_banded_solver(rng):
    n = 200
    lower = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    upper = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    diag = 6 + rng.standard_normal(n) + 1j * rng.standard_normal(n)
    rhs = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    x = _kernels.thomas(lower, diag, upper, rhs)
    ab = np.zeros((3, n), complex)
    ab[0, 1:] = upper[:-1]
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    assert np.allclose(x, solve_banded((1, 1), ab, rhs), rtol=1e-13, atol=1e-13)


def test_thomas_real(rng):
    n = 50
    d = np.full(n, -2.0)
    o = np.ones(n)
    rhs = rng.standard_normal(n)
    x = _kernels.thomas(o, d, o, rhs)
    dense = np.diag(d) + np.diag(o[:-1], 1) + np.diag(o[:-1], -1)
    assert np.allclose(dense @ x, rhs, atol=1e-12)


def test_npse_mean_is_divided_difference():
    omega, g = 10.0, 21.0

    def energy(r):  # antiderivative of npse_term
        return omega * (np.sqrt(1 + 2 * g * r) - 1) * r

    for r0, r1 in [(0.0, 0.05), (0.011, 0.0112), (0.03, 0.01)]:
        exact = (energy(r1) - energy(r0)) / (r1 - r0)
        assert abs(_kernels.npse_mean(r0, r1, omega, g) - exact) < 1e-9 * abs(exact)
    assert _kernels.npse_mean(0.02, 0.02, omega, g) == _kernels.npse_term(0.02, omega, g)
    h = 1e-7
    p0, p1 = _kernels.npse_mean_partials(0.01, 0.02, omega, g)
    assert abs(p0 - (_kernels.npse_mean(0.01 + h, 0.02, omega, g)
                     - _kernels.npse_mean(0.01 - h, 0.02, omega, g)) / (2 * h)) < 1e-6 * abs(p0)
    assert abs(p1 - (_kernels.npse_mean(0.01, 0.02 + h, omega, g)
                     - _kernels.npse_mean(0.01, 0.02 - h, omega, g)) / (2 * h)) < 1e-6 * abs(p1)


def test_adjoint_step_is_transpose_of_linearized_step(rng):
    """<mu, A dpsi> check: the block solve really inverts A^T."""
    n = 40
    psi_lo = np.zeros(n, complex)
    psi_hi = np.zeros(n, complex)
    psi_lo[1:-1] = 0.1 * (rng.standard_normal(n - 2) + 1j * rng.standard_normal(n - 2))
    psi_hi[1:-1] = 0.1 * (rng.standard_normal(n - 2) + 1j * rng.standard_normal(n - 2))
    v_lo = rng.uniform(0, 5, n)
    v_hi = rng.uniform(0, 5, n)
    kin, omega, g, dt = 3.0, 10.0, 21.0, 0.05
    a = dt / 2
    q = np.zeros(n, complex)
    q[1:-1] = rng.standard_normal(n - 2) + 1j * rng.standard_normal(n - 2)
    q_lo, mu = _kernels.adjoint_step(q, psi_lo, psi_hi, v_lo, v_hi, kin, omega, g, dt)

    def residual(lo, hi):
        """Forward residual F(psi_hi, psi_lo) on interior nodes."""
        w = 0.5 * (v_lo + v_hi) + np.array(
            [_kernels.npse_mean(r0, r1, omega, g) for r0, r1 in zip(abs(lo) ** 2, abs(hi) ** 2)])
        u = lo + hi
        hu = (2 * kin + w) * u
        hu[1:-1] -= kin * (u[:-2] + u[2:])
        f = hi - lo + 1j * a * hu
        f[0] = f[-1] = 0
        return f

    eps = 1e-6
    for _ in range(3):
        d = np.zeros(n, complex)
        d[1:-1] = rng.standard_normal(n - 2) + 1j * rng.standard_normal(n - 2)
        jac_hi = (residual(psi_lo, psi_hi + eps * d) - residual(psi_lo, psi_hi - eps * d)) / (2 * eps)
        jac_lo = (residual(psi_lo + eps * d, psi_hi) - residual(psi_lo - eps * d, psi_hi)) / (2 * eps)
        # A^T mu = q  <=>  Re<mu, A d> = Re<q, d>
        assert abs(np.real(np.vdot(mu, jac_hi)) - np.real(np.vdot(q, d))) < 1e-7 * np.abs(q).sum()
        # q_lo = -B^T mu  <=>  Re<q_lo, d> = -Re<mu, B d>
        assert abs(np.real(np.vdot(q_lo, d)) + np.real(np.vdot(mu, jac_lo))) < 1e-7 * np.abs(q).sum()
