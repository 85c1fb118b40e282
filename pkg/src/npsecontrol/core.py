"""Grids, physical parameters and the discrete inner products on them.

Units follow the usual normalization for elongated traps: time in ms, space
in um, hbar = 1. Wave functions are plain complex numpy arrays sampled on the
nodes of a :class:`SpatialGrid`, endpoints included (and held at zero).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MIN_SPATIAL_POINTS = 16


@dataclass(frozen=True)
class PhysicalParams:
    """Parameters of the quasi-1D gas.

    Defaults are the typical experimental values (mass 1.368, transverse
    frequency 10/ms, scattering length 4.2e-3 um, 5000 atoms).
    """

    m: float = 1.368
    omega_perp: float = 10.0
    a_s: float = 4.2e-3
    n_atoms: float = 5000.0

    def __post_init__(self):
        for name in ("m", "omega_perp", "a_s", "n_atoms"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value!r}")
        if self.m <= 0:
            raise ValueError("m must be positive")
        if self.omega_perp < 0 or self.a_s < 0 or self.n_atoms < 0:
            raise ValueError("omega_perp, a_s and n_atoms must be non-negative")

    @property
    def coupling(self) -> float:
        """The product a_s * N, the only combination entering the nonlinearity."""
        return self.a_s * self.n_atoms


@dataclass(frozen=True)
class SpatialGrid:
    length_L: float
    n_z: int
    z: np.ndarray = field(repr=False, compare=False)

    @property
    def dz(self) -> float:
        return self.length_L / (self.n_z - 1)

    def to_dict(self) -> dict:
        return {"length_L": self.length_L, "n_z": self.n_z}

    @classmethod
    def from_dict(cls, d: dict) -> "SpatialGrid":
        return make_spatial_grid(float(d["length_L"]), int(d["n_z"]))


@dataclass(frozen=True)
class TimeGrid:
    horizon_T: float
    n_t: int

    def __post_init__(self):
        if not (math.isfinite(self.horizon_T) and self.horizon_T > 0):
            raise ValueError(f"horizon_T must be positive and finite, got {self.horizon_T!r}")
        if int(self.n_t) != self.n_t or self.n_t < 2:
            raise ValueError(f"n_t must be an integer >= 2, got {self.n_t!r}")

    @property
    def dt(self) -> float:
        return self.horizon_T / self.n_t

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.n_t + 1) * self.dt

    def to_dict(self) -> dict:
        return {"horizon_T": self.horizon_T, "n_t": self.n_t}

    @classmethod
    def from_dict(cls, d: dict) -> "TimeGrid":
        return cls(float(d["horizon_T"]), int(d["n_t"]))


def make_spatial_grid(length_L: float, n_z: int) -> SpatialGrid:
    """Uniform node grid on [-L/2, L/2] with both endpoints included."""
    try:
        length_L = float(length_L)
    except (TypeError, ValueError):
        raise ValueError(f"length_L must be a number, got {length_L!r}") from None
    if not (math.isfinite(length_L) and length_L > 0):
        raise ValueError(f"length_L must be positive and finite, got {length_L!r}")
    if int(n_z) != n_z or n_z < MIN_SPATIAL_POINTS:
        raise ValueError(f"n_z must be an integer >= {MIN_SPATIAL_POINTS}, got {n_z!r}")
    n_z = int(n_z)
    half = 0.5 * float(length_L)
    z = (np.arange(n_z) - 0.5 * (n_z - 1)) * (float(length_L) / (n_z - 1))
    z[0] = -half
    z[-1] = half
    z.setflags(write=False)
    return SpatialGrid(float(length_L), n_z, z)


def make_time_grid(horizon_T: float, n_t: int) -> TimeGrid:
    return TimeGrid(float(horizon_T), int(n_t))


def _check(psi: np.ndarray, grid: SpatialGrid) -> None:
    if np.shape(psi) != (grid.n_z,):
        raise ValueError(f"field has shape {np.shape(psi)}, grid expects ({grid.n_z},)")


def norm_squared(psi: np.ndarray, grid: SpatialGrid) -> float:
    """Trapezoidal integral of |psi|^2."""
    _check(psi, grid)
    rho = np.abs(psi) ** 2
    return float(grid.dz * (rho.sum() - 0.5 * (rho[0] + rho[-1])))


def overlap(a: np.ndarray, b: np.ndarray, grid: SpatialGrid) -> complex:
    """Trapezoidal integral of conj(a) * b."""
    _check(a, grid)
    _check(b, grid)
    prod = np.conj(a) * b
    return complex(grid.dz * (prod.sum() - 0.5 * (prod[0] + prod[-1])))


def normalize(psi: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    nrm = norm_squared(psi, grid)
    if nrm <= 0:
        raise ValueError("cannot normalize a zero field")
    return psi / math.sqrt(nrm)


def second_derivative(psi: np.ndarray, dz: float) -> np.ndarray:
    """Three-point stencil; endpoint rows use the Dirichlet zero ghost."""
    out = np.empty_like(psi)
    out[1:-1] = (psi[2:] - 2.0 * psi[1:-1] + psi[:-2]) / dz**2
    out[0] = (psi[1] - 2.0 * psi[0]) / dz**2
    out[-1] = (psi[-2] - 2.0 * psi[-1]) / dz**2
    return out


# --- CSV I/O -------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_field_csv(path, psi: np.ndarray, grid: SpatialGrid, comment: str | None = None) -> None:
    """Columnar CSV ``z,re,im`` with a one-line header (optional leading comment)."""
    _check(psi, grid)
    with open(path, "w") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        fh.write("z,re,im\n")
        for zi, v in zip(grid.z, np.asarray(psi, dtype=complex)):
            fh.write(f"{_fmt(zi)},{_fmt(v.real)},{_fmt(v.imag)}\n")


def read_field_csv(path) -> tuple[np.ndarray, SpatialGrid]:
    with open(path) as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0].strip() != "z,re,im":
        raise ValueError(f"{path}: expected header 'z,re,im'")
    arr = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]])
    z = arr[:, 0]
    grid = make_spatial_grid(float(z[-1] - z[0]), len(z))
    if not np.array_equal(grid.z, z):
        raise ValueError(f"{path}: z column is not a uniform node grid")
    return arr[:, 1] + 1j * arr[:, 2], grid


class SolverError(RuntimeError):
    """A time stepper or ground-state iteration failed to converge."""
