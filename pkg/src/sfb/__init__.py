"""Stochastic forward-backward splitting for monotone inclusions."""

__version__ = "0.1.0"

from .core import (ConfigError, ContractError, InclusionProblem, RandomStream, SeedSpec,
                   Trajectory, derive_stream)
from .oracles import OracleParams, StochasticOracle, verify_moments
from .solver import Schedule, check_assumptions, run, step
from .bounds import RateConstants, est1, est11
from .harness import ExperimentConfig, compare_to_bound, fit_rate, run_experiment

__all__ = [
    "ConfigError", "ContractError", "InclusionProblem", "RandomStream", "SeedSpec",
    "Trajectory", "derive_stream", "OracleParams", "StochasticOracle", "verify_moments",
    "Schedule", "check_assumptions", "run", "step", "RateConstants", "est1", "est11",
    "ExperimentConfig", "compare_to_bound", "fit_rate", "run_experiment",
]
