"""Numerical companion for the radial energy-critical focusing wave equation
``u_tt - Δu = |u|^{2*-2} u`` in dimensions 3 and 5, near the ground state."""

from .evolution import EvolveConfig, TrajectoryRecord, evolve, step
from .experiments import SeedSpec, ejection_fit, one_pass_audit, quadrant_sweep, seed_state
from .functionals import energy, report, static_energy, virial
from .ground_state import GroundStateFamily, W_lambda, make_W
from .modulation import DistanceParams, decompose, distance_dS, sign_Sigma, solve_lambda
from .radial import Grid, PhaseState, RadialField
from .spectral import Eigenpair, ground_eigenpair

__version__ = "0.1.0"

__all__ = [
    "DistanceParams",
    "Eigenpair",
    "EvolveConfig",
    "Grid",
    "GroundStateFamily",
    "PhaseState",
    "RadialField",
    "SeedSpec",
    "TrajectoryRecord",
    "W_lambda",
    "decompose",
    "distance_dS",
    "ejection_fit",
    "energy",
    "evolve",
    "ground_eigenpair",
    "make_W",
    "one_pass_audit",
    "quadrant_sweep",
    "report",
    "seed_state",
    "sign_Sigma",
    "solve_lambda",
    "static_energy",
    "step",
    "virial",
]
