"""Experiment harness: config schemas, command runners, CSV/plot emission."""

from .config import SCHEMAS, ExperimentSpec, load_spec
from .commands import run_command
from .converge import ConvergenceReport, run_convergence

__all__ = ["SCHEMAS", "ExperimentSpec", "load_spec", "run_command",
           "ConvergenceReport", "run_convergence"]
