"""Experiment orchestration: configs, runs, persisted results and comparisons."""

from .compare import CompareError, compare_runs
from .config import (ConfigError, ExperimentConfig, MissingField, RangeViolation, UnknownKey,
                     parse_config, parse_text)
from .runner import EXIT_BANDS, EXIT_ERROR, EXIT_OK, run

__all__ = ["CompareError", "ConfigError", "ExperimentConfig", "MissingField", "RangeViolation",
           "UnknownKey", "compare_runs", "parse_config", "parse_text", "run", "EXIT_OK",
           "EXIT_ERROR", "EXIT_BANDS"]
