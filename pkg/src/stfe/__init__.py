"""Trotter-Kato splitting for the stochastic thin-film equation on a periodic domain."""

from .errors import *  # noqa: F401,F403
from .grid import Grid, GridFunction, PeriodicOperator, solve_banded_periodic
from .noise import NoiseModel, WienerIncrements, sample_increments, correction_operator
from .tfe_det import DetStepConfig, det_step
from .transport_sto import StoStepConfig, sto_step
from .diagnostics import EntropyParams, TestFunctionSet, DiagnosticsSeries
from .splitter import SplitSchedule, SplitPath, run_path, concat_clock, refine_study

__version__ = "0.1.0"
