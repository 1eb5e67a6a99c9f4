"""Reproducible simulation experiments.

An experiment is described by a flat configuration file (see
:mod:`hazardlens.simlab.config`); :func:`run_experiment` executes it and
returns a report that serialises to deterministic JSON and CSV curves.
"""

from .censoring import AdminCensoring, MixedCensoring, NoCensoring, UniformCensoring, apply_censoring, censor_times
from .config import ConfigError, ExperimentConfig, bundled_configs, load_config, parse_config
from .figures import calibrate_fig9_baseline, fig9_curve, write_svg
from .runner import ESTIMATORS, ExperimentError, ExperimentReport, build_dgp, run_experiment

__all__ = [
    "AdminCensoring",
    "MixedCensoring",
    "NoCensoring",
    "UniformCensoring",
    "apply_censoring",
    "censor_times",
    "ConfigError",
    "ExperimentConfig",
    "bundled_configs",
    "load_config",
    "parse_config",
    "calibrate_fig9_baseline",
    "fig9_curve",
    "write_svg",
    "ESTIMATORS",
    "ExperimentError",
    "ExperimentReport",
    "build_dgp",
    "run_experiment",
]
