"""stopgrad: threshold-policy simulation and derivative estimation for a
continuous-state transplant-timing stopping problem."""

from .config import ExperimentConfig, build_model, load_config
from .dp import (
    GridValueFunction,
    extract_control_limit,
    oracle_derivative,
    policy_value,
    policy_value_sweep,
    value_iterate,
)
from .estimators import GradEstimate, fd_estimate, ipa_estimate, spa_estimate, spa_single_rep
from .kernel import TransitionKernel, UniformDeteriorationKernel, check_ifr
from .model import Action, ControlLimitPolicy, StoppingModel, check_assumptions
from .sim import ReplicationStreams, Trajectory, estimate_value, sample_paths, simulate_path

__version__ = "0.1.0"

__all__ = [
    "Action",
    "ControlLimitPolicy",
    "ExperimentConfig",
    "GradEstimate",
    "GridValueFunction",
    "ReplicationStreams",
    "StoppingModel",
    "Trajectory",
    "TransitionKernel",
    "UniformDeteriorationKernel",
    "build_model",
    "check_assumptions",
    "check_ifr",
    "estimate_value",
    "extract_control_limit",
    "fd_estimate",
    "ipa_estimate",
    "load_config",
    "oracle_derivative",
    "policy_value",
    "policy_value_sweep",
    "sample_paths",
    "simulate_path",
    "spa_estimate",
    "spa_single_rep",
    "value_iterate",
]
