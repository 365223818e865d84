"""Deterministic simulator and evaluation harness for a mixed-consistency
replication protocol (weak ops speculate, strong ops commit via conditional
atomic broadcast) plus SMR, Bayou and Archie-style baselines."""

from .config import ExperimentConfig, load_config, parse_config_text
from .runner import Cluster, RunResult, run_experiment, run_simulation

__version__ = "0.1.0"

__all__ = [
    "Cluster",
    "ExperimentConfig",
    "RunResult",
    "load_config",
    "parse_config_text",
    "run_experiment",
    "run_simulation",
    "__version__",
]
