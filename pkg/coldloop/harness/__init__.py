"""Reproduction harness: configuration, experiments, reports and the command line."""

from .config import ExperimentConfig, config_hash, load_config
from .experiments import (
    SquashRow,
    SweepReport,
    SweepRow,
    TheoryCurves,
    fit_reference,
    heterodyne_thermometry,
    run_gain_sweep,
    run_squashing_demo,
    theory_curves,
)
from .report import emit_report

__all__ = [
    "ExperimentConfig",
    "SquashRow",
    "SweepReport",
    "SweepRow",
    "TheoryCurves",
    "config_hash",
    "emit_report",
    "fit_reference",
    "heterodyne_thermometry",
    "load_config",
    "run_gain_sweep",
    "run_squashing_demo",
    "theory_curves",
]
