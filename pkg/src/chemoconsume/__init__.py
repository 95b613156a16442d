"""Simulation and numerical certification for the regularized chemotaxis-consumption system."""

from .grid import Annulus, Grid, Interval, Rectangle, make_grid
from .initial_data import InitialPair, build_scenario, gen_test_function, mollify_u0, mollify_v0, prepare_initial
from .solver import SimParams, SimState, Solver, SolverError, Trajectory, cfl_dt, flux_u, run

__all__ = [
    "Annulus",
    "Grid",
    "Interval",
    "Rectangle",
    "make_grid",
    "InitialPair",
    "build_scenario",
    "gen_test_function",
    "mollify_u0",
    "mollify_v0",
    "prepare_initial",
    "SimParams",
    "SimState",
    "Solver",
    "SolverError",
    "Trajectory",
    "cfl_dt",
    "flux_u",
    "run",
]

__version__ = "0.1.0"
