"""kindiff: desk-scale laboratory for a randomly perturbed BGK equation
and its stochastic diffusion limit."""

__version__ = "0.1.0"

from .errors import AdmissibilityError
from .grid import Grid, GridField
from .velocity import VelocityModel, make_velocity_model, moments, relaxation, two_speed_model
from .chain import PilotChain, build_chain, sample_path, resolvent, apply_generator
from .coefficients import LimitCoefficients, compute_limit_coefficients
from .kinetic import KineticState, simulate_path
from .spde import simulate_spde, solve_deterministic
from .config import ExperimentConfig, load_config

__all__ = [
    "AdmissibilityError",
    "Grid",
    "GridField",
    "VelocityModel",
    "make_velocity_model",
    "moments",
    "relaxation",
    "two_speed_model",
    "PilotChain",
    "build_chain",
    "sample_path",
    "resolvent",
    "apply_generator",
    "LimitCoefficients",
    "compute_limit_coefficients",
    "KineticState",
    "simulate_path",
    "simulate_spde",
    "solve_deterministic",
    "ExperimentConfig",
    "load_config",
    "__version__",
]
