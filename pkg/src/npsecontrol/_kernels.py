"""Compiled inner loops for the Crank-Nicolson forward and adjoint sweeps.

All kernels work on full nodal arrays (Dirichlet endpoints included) and only
touch interior nodes ``1..n-2``. ``kin`` is the kinetic stencil weight
``1/(2 m dz^2)``; ``g`` is the coupling ``a_s * N``.
"""
import math

import numpy as np
from numba import njit

STATUS_OK = 0
STATUS_NO_CONVERGENCE = 1
STATUS_NAN = 2


@njit(cache=True, nogil=True)
def npse_term(rho, omega, g):
    s = math.sqrt(1.0 + 2.0 * g * rho)
    return omega * ((1.0 + 3.0 * g * rho) / s - 1.0)


@njit(cache=True, nogil=True)
def npse_slope(rho, omega, g):
    # d/drho of npse_term
    q = 1.0 + 2.0 * g * rho
    s = math.sqrt(q)
    return omega * (3.0 * g / s - (1.0 + 3.0 * g * rho) * g / (q * s))


@njit(cache=True, nogil=True)
def npse_mean(r0, r1, omega, g):
    """Mean of npse_term over [r0, r1], i.e. the divided difference of the
    interaction energy omega (sqrt(1 + 2 g r) - 1) r. Using it in the step
    makes the energy an exact invariant for static potentials. Written without
    cancellation, so it reduces smoothly to npse_term(r0) as r1 -> r0."""
    s0 = math.sqrt(1.0 + 2.0 * g * r0)
    s1 = math.sqrt(1.0 + 2.0 * g * r1)
    return omega * (s1 + 2.0 * g * r0 / (s0 + s1) - 1.0)


@njit(cache=True, nogil=True)
def npse_mean_partials(r0, r1, omega, g):
    """Derivatives of :func:`npse_mean` with respect to ``r0`` and ``r1``."""
    s0 = math.sqrt(1.0 + 2.0 * g * r0)
    s1 = math.sqrt(1.0 + 2.0 * g * r1)
    t = s0 + s1
    k = 2.0 * g * g * r0 / (t * t)
    p0 = omega * (2.0 * g / t - k / s0)
    p1 = omega * (g / s1 - k / s1)
    return p0, p1


@njit(cache=True, nogil=True)
def thomas(lower, diag, upper, rhs):
    """Tridiagonal solve; ``lower[0]`` and ``upper[-1]`` are ignored."""
    n = diag.shape[0]
    cp = np.empty(n, dtype=diag.dtype)
    dp = np.empty(n, dtype=rhs.dtype)
    cp[0] = upper[0] / diag[0]
    dp[0] = rhs[0] / diag[0]
    for j in range(1, n):
        m = diag[j] - lower[j] * cp[j - 1]
        cp[j] = upper[j] / m
        dp[j] = (rhs[j] - lower[j] * dp[j - 1]) / m
    x = np.empty(n, dtype=rhs.dtype)
    x[n - 1] = dp[n - 1]
    for j in range(n - 2, -1, -1):
        x[j] = dp[j] - cp[j] * x[j + 1]
    return x


@njit(cache=True, nogil=True)
def cn_step(psi, v_old, v_new, kin, omega, g, dt, tol, max_iter):
    """One Crank-Nicolson step with fixed-point iteration on the new density.

    Returns ``(psi_new, iterations, status)``.
    """
    n = psi.shape[0]
    m = n - 2
    a = 0.5 * dt
    rho_old = np.empty(m)
    vbar = np.empty(m)
    for j in range(m):
        rho_old[j] = psi[j + 1].real ** 2 + psi[j + 1].imag ** 2
        vbar[j] = 0.5 * (v_old[j + 1] + v_new[j + 1])
    rho_new = rho_old.copy()
    lower = np.empty(m, dtype=np.complex128)
    upper = np.empty(m, dtype=np.complex128)
    diag = np.empty(m, dtype=np.complex128)
    rhs = np.empty(m, dtype=np.complex128)
    off = -1j * a * kin
    for j in range(m):
        lower[j] = off
        upper[j] = off
    x_prev = np.empty(m, dtype=np.complex128)
    for j in range(m):
        x_prev[j] = psi[j + 1]
    out = np.zeros(n, dtype=np.complex128)
    for it in range(1, max_iter + 1):
        for j in range(m):
            w = vbar[j] + npse_mean(rho_old[j], rho_new[j], omega, g)
            h = (2.0 * kin + w) * psi[j + 1] - kin * (psi[j] + psi[j + 2])
            diag[j] = 1.0 + 1j * a * (2.0 * kin + w)
            rhs[j] = psi[j + 1] - 1j * a * h
        x = thomas(lower, diag, upper, rhs)
        num = 0.0
        den = 0.0
        for j in range(m):
            d = x[j] - x_prev[j]
            num += d.real ** 2 + d.imag ** 2
            den += x[j].real ** 2 + x[j].imag ** 2
            rho_new[j] = x[j].real ** 2 + x[j].imag ** 2
            x_prev[j] = x[j]
        if not (num == num and den == den) or math.isinf(den):
            return out, it, STATUS_NAN
        if num <= tol * tol * den:
            for j in range(m):
                out[j + 1] = x[j]
            return out, it, STATUS_OK
    for j in range(m):
        out[j + 1] = x_prev[j]
    return out, max_iter, STATUS_NO_CONVERGENCE


@njit(cache=True, nogil=True)
def cn_propagate(psi0, v_table, kin, omega, g, dt, tol, max_iter):
    """Run ``cn_step`` across all rows of ``v_table``; keeps every time level.

    Returns ``(levels, worst_iterations, status, failed_step)``.
    """
    nt = v_table.shape[0] - 1
    n = psi0.shape[0]
    levels = np.zeros((nt + 1, n), dtype=np.complex128)
    levels[0] = psi0
    worst = 0
    for k in range(nt):
        nxt, its, status = cn_step(levels[k], v_table[k], v_table[k + 1],
                                   kin, omega, g, dt, tol, max_iter)
        if its > worst:
            worst = its
        if status != STATUS_OK:
            return levels, worst, status, k
        levels[k + 1] = nxt
    return levels, worst, STATUS_OK, -1


@njit(cache=True, nogil=True)
def adjoint_step(q_hi, psi_lo, psi_hi, v_lo, v_hi, kin, omega, g, dt):
    """Transpose of one forward step, taken backward in time.

    Solves ``A^T mu = q_hi`` for the interval multiplier ``mu`` (a real-linear
    2x2 block-tridiagonal system because the density couples ``mu`` and its
    conjugate) and returns ``(q_lo, mu)`` with ``q_lo = -B^T mu``.
    """
    n = psi_lo.shape[0]
    m = n - 2
    a = 0.5 * dt
    # block Thomas with 2x2 blocks; off-diagonal blocks are [[0, -a k], [a k, 0]]
    ak = a * kin
    cp = np.empty((m, 2, 2))
    dp = np.empty((m, 2))
    s_hi = np.empty(m)
    s_lo = np.empty(m)
    wj = np.empty(m)
    for j in range(m):
        rl = psi_lo[j + 1].real ** 2 + psi_lo[j + 1].imag ** 2
        rh = psi_hi[j + 1].real ** 2 + psi_hi[j + 1].imag ** 2
        wj[j] = 0.5 * (v_lo[j + 1] + v_hi[j + 1]) + npse_mean(rl, rh, omega, g)
        p0, p1 = npse_mean_partials(rl, rh, omega, g)
        s_lo[j] = 2.0 * a * p0
        s_hi[j] = 2.0 * a * p1
    prev_c00 = 0.0
    prev_c01 = 0.0
    prev_c10 = 0.0
    prev_c11 = 0.0
    prev_d0 = 0.0
    prev_d1 = 0.0
    for j in range(m):
        u = psi_lo[j + 1] + psi_hi[j + 1]
        ph = psi_hi[j + 1]
        s = s_hi[j]
        e = a * (2.0 * kin + wj[j])
        d00 = 1.0 - s * u.imag * ph.real
        d01 = e + s * u.real * ph.real
        d10 = -e - s * u.imag * ph.imag
        d11 = 1.0 + s * u.real * ph.imag
        r0 = q_hi[j + 1].real
        r1 = q_hi[j + 1].imag
        if j > 0:
            # M = D - L C_prev, L = [[0, -ak], [ak, 0]]
            d00 -= -ak * prev_c10
            d01 -= -ak * prev_c11
            d10 -= ak * prev_c00
            d11 -= ak * prev_c01
            r0 -= -ak * prev_d1
            r1 -= ak * prev_d0
        det = d00 * d11 - d01 * d10
        i00 = d11 / det
        i01 = -d01 / det
        i10 = -d10 / det
        i11 = d00 / det
        # C = M^-1 U, U = [[0, -ak], [ak, 0]]
        c00 = i01 * ak
        c01 = -i00 * ak
        c10 = i11 * ak
        c11 = -i10 * ak
        dd0 = i00 * r0 + i01 * r1
        dd1 = i10 * r0 + i11 * r1
        cp[j, 0, 0] = c00
        cp[j, 0, 1] = c01
        cp[j, 1, 0] = c10
        cp[j, 1, 1] = c11
        dp[j, 0] = dd0
        dp[j, 1] = dd1
        prev_c00, prev_c01, prev_c10, prev_c11 = c00, c01, c10, c11
        prev_d0, prev_d1 = dd0, dd1
    mu = np.zeros(n, dtype=np.complex128)
    x0 = dp[m - 1, 0]
    x1 = dp[m - 1, 1]
    mu[m] = x0 + 1j * x1
    for j in range(m - 2, -1, -1):
        y0 = dp[j, 0] - (cp[j, 0, 0] * x0 + cp[j, 0, 1] * x1)
        y1 = dp[j, 1] - (cp[j, 1, 0] * x0 + cp[j, 1, 1] * x1)
        x0, x1 = y0, y1
        mu[j + 1] = x0 + 1j * x1
    q_lo = np.zeros(n, dtype=np.complex128)
    for j in range(m):
        hm = (2.0 * kin + wj[j]) * mu[j + 1] - kin * (mu[j] + mu[j + 2])
        u = psi_lo[j + 1] + psi_hi[j + 1]
        imp = u.real * mu[j + 1].imag - u.imag * mu[j + 1].real
        q_lo[j + 1] = mu[j + 1] + 1j * a * hm - s_lo[j] * imp * psi_lo[j + 1]
    return q_lo, mu


@njit(cache=True, nogil=True)
def adjoint_sweep(levels, v_table, dv_table, q_final, kin, omega, g, dt, dz):
    """Backward pass over all intervals.

    Returns ``(dyn_grad, q0)`` where ``dyn_grad[k]`` is the derivative of the
    terminal cost with respect to the control sample ``k`` and ``q0`` the
    transported adjoint at the initial level.
    """
    nt = levels.shape[0] - 1
    n = levels.shape[1]
    a = 0.5 * dt
    grad = np.zeros(nt + 1)
    q = q_final.copy()
    for k in range(nt - 1, -1, -1):
        q, mu = adjoint_step(q, levels[k], levels[k + 1], v_table[k],
                             v_table[k + 1], kin, omega, g, dt)
        s_lo = 0.0
        s_hi = 0.0
        for j in range(1, n - 1):
            u = levels[k, j] + levels[k + 1, j]
            z = mu[j].real * u.imag - mu[j].imag * u.real  # Im(conj(mu) u)
            s_lo += dv_table[k, j] * z
            s_hi += dv_table[k + 1, j] * z
        grad[k] += -0.5 * a * dz * s_lo
        grad[k + 1] += -0.5 * a * dz * s_hi
    return grad, q
