"""Simulator for multi-party GHZ-based key distribution and the attacks against it."""

from .harness import ExperimentConfig, run_monte_carlo
from .protocol import SequencePlan, SessionConfig, run_session

__version__ = "0.1.0"

__all__ = ["ExperimentConfig", "SequencePlan", "SessionConfig", "run_monte_carlo", "run_session"]
