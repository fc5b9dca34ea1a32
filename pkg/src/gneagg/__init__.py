"""Variational GNE seeking for aggregative games over time-varying networks."""

__version__ = "0.1.0"

from .algorithms import run_algorithm1, run_algorithm2, run_algorithm3
from .config import ExperimentConfig, load_config, preset
from .errors import GneAggError
from .game import CournotParams, GameInstance, build_cournot, constants, pseudo_gradient
from .network import MixingVariant, generate_schedule, metropolis_weights
from .oracle import ReferenceSolution, solve_reference
from .steps import Constant, PowerLaw, make_step_plan
from .store import ResultStore
from .trace import RunTrace

__all__ = [
    "Constant",
    "CournotParams",
    "ExperimentConfig",
    "GameInstance",
    "GneAggError",
    "MixingVariant",
    "PowerLaw",
    "ReferenceSolution",
    "ResultStore",
    "RunTrace",
    "__version__",
    "build_cournot",
    "constants",
    "generate_schedule",
    "load_config",
    "make_step_plan",
    "metropolis_weights",
    "preset",
    "pseudo_gradient",
    "run_algorithm1",
    "run_algorithm2",
    "run_algorithm3",
    "solve_reference",
]
