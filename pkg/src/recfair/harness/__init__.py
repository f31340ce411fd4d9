"""Configuration, grid search, experiment orchestration, reports and the command line."""

from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .report import CellMetrics, MetricReport, ReportRow, emit_report, parse_csv
from .runner import CACHE_ENV, Experiment, StageError, grid_search, load_dataset, run_experiment

__all__ = [
    "CACHE_ENV", "CellMetrics", "ConfigError", "Experiment", "ExperimentConfig", "MetricReport", "ReportRow",
    "StageError", "emit_report", "grid_search", "load_config", "load_dataset", "parse_config", "parse_csv",
    "run_experiment",
]
