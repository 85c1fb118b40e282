"""Optimal control of a quasi-1D Bose gas compressed by the moving walls of a box potential.

Modules: :mod:`core` (grids, parameters, I/O), :mod:`potential` (box and
trajectories), :mod:`dynamics` (npSE propagation, ground states), :mod:`adjoint`
(costs and backward sweep), :mod:`optimize` (IOA and BFA) and :mod:`cli`.
"""
from .adjoint import CostKind, CostSpec
from .core import PhysicalParams, SolverError, make_spatial_grid, make_time_grid
from .dynamics import ground_state, propagate, total_energy
from .optimize import StopCriteria, build_problem, optimize_bfa, optimize_ioa
from .potential import BoxPotential, ControlTrajectory, bfa_trajectory, linear_ramp_trajectory

__version__ = "0.1.0"
