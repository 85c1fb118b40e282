"""Soft-walled box potential and the wall-displacement control.

The control ``lam`` is the inward displacement of each wall, so the box spans
roughly ``[-(w0/2 - lam), w0/2 - lam]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .core import TimeGrid


@dataclass(frozen=True)
class BoxPotential:
    """Box with error-function walls of height ``v_max`` and softness ``sigma``."""

    v_max: float = 200.0
    w0: float = 100.0
    sigma: float = 3.0

    def __post_init__(self):
        if not (self.v_max > 0 and self.w0 > 0 and self.sigma > 0):
            raise ValueError("v_max, w0 and sigma must be positive")
        if self.sigma >= self.w0:
            raise ValueError("sigma must be much smaller than w0")

    def value(self, z, lam):
        half = self.w0 / 2 - lam
        return (self.v_max
                - 0.5 * self.v_max * erf((z + half) / self.sigma)
                + 0.5 * self.v_max * erf((z - half) / self.sigma))

    def dlambda(self, z, lam):
        half = self.w0 / 2 - lam
        u1 = (z + half) / self.sigma
        u2 = (z - half) / self.sigma
        return self.v_max / (self.sigma * math.sqrt(math.pi)) * (np.exp(-u1**2) + np.exp(-u2**2))


def potential_at(pot: BoxPotential, z, lam):
    return pot.value(z, lam)


def potential_dlambda(pot: BoxPotential, z, lam):
    return pot.dlambda(z, lam)


@dataclass(frozen=True)
class ControlTrajectory:
    """Nodal samples of the wall displacement on a :class:`TimeGrid`."""

    samples: np.ndarray
    time_grid: TimeGrid

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.shape != (self.time_grid.n_t + 1,):
            raise ValueError(
                f"expected {self.time_grid.n_t + 1} samples, got shape {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ValueError("control samples must be finite")
        s = s.copy()
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def lambda_0(self) -> float:
        return float(self.samples[0])

    @property
    def lambda_T(self) -> float:
        return float(self.samples[-1])

    def with_interior(self, interior: np.ndarray) -> "ControlTrajectory":
        s = self.samples.copy()
        s[1:-1] = interior
        return ControlTrajectory(s, self.time_grid)

    def rate(self) -> np.ndarray:
        """d(lam)/dt: second-order central differences, one-sided at the ends."""
        return np.gradient(self.samples, self.time_grid.dt, edge_order=2)


def linear_ramp(t, T: float, lambda_0: float, lambda_T: float):
    """Linear wall displacement from ``lambda_0`` to ``lambda_T``, held after ``T``."""
    if T <= 0:
        raise ValueError("T must be positive")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    frac = np.minimum(t / T, 1.0)
    out = lambda_0 + frac * (lambda_T - lambda_0)
    return float(out) if out.ndim == 0 else out


def linear_ramp_trajectory(time_grid: TimeGrid, lambda_0: float, lambda_T: float) -> ControlTrajectory:
    s = linear_ramp(time_grid.t, time_grid.horizon_T, lambda_0, lambda_T)
    s[0], s[-1] = lambda_0, lambda_T
    return ControlTrajectory(s, time_grid)


def constant_trajectory(time_grid: TimeGrid, lam: float) -> ControlTrajectory:
    return ControlTrajectory(np.full(time_grid.n_t + 1, float(lam)), time_grid)


def bfa_basis(time_grid: TimeGrid, order: int) -> np.ndarray:
    """Matrix of sin(k pi t / T), k = 1..order, one column per mode (zero at both ends)."""
    t = time_grid.t / time_grid.horizon_T
    k = np.arange(1, order + 1)
    basis = np.sin(np.pi * np.outer(t, k))
    basis[0] = 0.0
    basis[-1] = 0.0
    return basis


def bfa_trajectory(coeffs, time_grid: TimeGrid, lambda_0: float, lambda_T: float) -> ControlTrajectory:
    """Linear ramp plus a sine series with the given coefficients (um)."""
    a = np.atleast_1d(np.asarray(coeffs, dtype=float))
    if a.ndim != 1 or a.size < 1:
        raise ValueError("need at least one coefficient")
    if not np.all(np.isfinite(a)):
        raise ValueError("coefficients must be finite")
    s = linear_ramp_trajectory(time_grid, lambda_0, lambda_T).samples.copy()
    s += bfa_basis(time_grid, a.size) @ a
    s[0], s[-1] = lambda_0, lambda_T
    return ControlTrajectory(s, time_grid)


def compression_ratio(w0: float, lambda_T: float) -> float:
    if not 0 <= lambda_T < w0 / 2:
        raise ValueError(f"lambda_T={lambda_T} must lie in [0, w0/2) for w0={w0}")
    return (w0 - 2 * lambda_T) / w0


def displacement_for_ratio(w0: float, r_comp: float) -> float:
    """Inverse of :func:`compression_ratio`."""
    if not 0 < r_comp <= 1:
        raise ValueError(f"r_comp must lie in (0, 1], got {r_comp}")
    return 0.5 * w0 * (1 - r_comp)


def write_trajectory_csv(path, control: ControlTrajectory, comment: str | None = None) -> None:
    with open(path, "w") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        fh.write("t,lambda\n")
        for t, lam in zip(control.time_grid.t, control.samples):
            fh.write(f"{t:.17g},{lam:.17g}\n")


def read_trajectory_csv(path) -> ControlTrajectory:
    with open(path) as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0].strip() != "t,lambda":
        raise ValueError(f"{path}: expected header 't,lambda'")
    arr = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]])
    grid = TimeGrid(float(arr[-1, 0]), len(arr) - 1)
    return ControlTrajectory(arr[:, 1], grid)
