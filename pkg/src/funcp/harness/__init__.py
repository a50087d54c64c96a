"""Configuration, file formats and experiment drivers."""

from .config import ExperimentConfig, load_config
from .experiments import DRIVERS, RunResult, Table, run_experiment
from .fileformat import read_dataset, read_operators, write_dataset, write_operators

__all__ = [
    "ExperimentConfig",
    "load_config",
    "DRIVERS",
    "RunResult",
    "Table",
    "run_experiment",
    "read_dataset",
    "write_dataset",
    "read_operators",
    "write_operators",
]
