"""Config parsing, experiment drivers and the ``glplab`` command line."""

from .config import KINDS, ConfigError, ExperimentConfig, default_config, load_config, parse_config, serialize_config
from .runner import RunError, RunReport, run_experiment

__all__ = ["KINDS", "ConfigError", "ExperimentConfig", "RunError", "RunReport", "default_config", "load_config",
           "parse_config", "run_experiment", "serialize_config"]
