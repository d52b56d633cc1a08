"""Structure-preserving simulator for Cahn-Hilliard equations with dynamic boundary conditions."""

from .errors import *  # noqa: F401,F403
from .grid import SlabGrid, build_grid
from .model import ModelParams
from .potentials import Custom, Logarithmic, PotentialSpec, YosidaConfig
from .fields import BulkSurfacePair, Linkage, generalized_mean, hminus_norm, hminus_solve, total_energy
from .stepper import Scheme, SimState, StepConfig, Stepper, advance, initial_state, run_trajectory
from .stationary import StationaryState, mu_infty_formula, solve_stationary, steady_residual
from .config import RunConfig, parse_config, serialize

__all__ = [
    "SlabGrid", "build_grid", "ModelParams", "Custom", "Logarithmic", "PotentialSpec", "YosidaConfig",
    "BulkSurfacePair", "Linkage", "generalized_mean", "hminus_norm", "hminus_solve", "total_energy",
    "Scheme", "SimState", "StepConfig", "Stepper", "advance", "initial_state", "run_trajectory",
    "StationaryState", "mu_infty_formula", "solve_stationary", "steady_residual",
    "RunConfig", "parse_config", "serialize",
]

__version__ = "0.1.0"
