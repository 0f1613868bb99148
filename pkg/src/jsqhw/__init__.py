"""Many-server join-the-shortest-queue systems in the Halfin-Whitt regime.

Exact CTMC simulation (counts, truncated and per-queue modes), diffusion
and fluid scaling, one-sided reflection, a windowed Picard solver for the
reflected limit system, and Monte Carlo checks tying them together.
"""

__version__ = "0.1.0"

from ._backend import BACKEND
from .analysis import (MartingalePath, MomentAccumulator, RunStats, WaitSummary,
                       aggregate_waiting_time, delayed_wait_distribution,
                       estimate_hitting_probability, extract_martingales, ks_two_sample,
                       run_stats, wilson_interval)
from .errors import (ConfigError, EmptySample, GridOutOfRange, InvalidParams, JSQError,
                     MismatchedInputs, NonConvergence, PreconditionViolation,
                     RepresentationOverflow)
from .limit_solver import (DrivingInput, LimitSolution, NoiseSpec, explicit_tail_solution,
                           make_limit_drivers, sample_brownian, simulate_limit_diffusion,
                           solve_limit_system)
from .reflection import INFINITY, reflect_lower, reflect_upper
from .scaling import Grid, GridPath, scale_diffusion, scale_fluid, unscale_diffusion
from .sim_core import (CountState, GridObservation, ModelParams, StepPath, TruncationCounters,
                       WaitRecords, observe_counts, simulate_jsq_counts, simulate_jsq_per_queue,
                       simulate_jsq_truncated)

__all__ = [
    "__version__",
    "BACKEND",
    "MartingalePath",
    "MomentAccumulator",
    "RunStats",
    "WaitSummary",
    "aggregate_waiting_time",
    "delayed_wait_distribution",
    "estimate_hitting_probability",
    "extract_martingales",
    "ks_two_sample",
    "run_stats",
    "wilson_interval",
    "ConfigError",
    "EmptySample",
    "GridOutOfRange",
    "InvalidParams",
    "JSQError",
    "MismatchedInputs",
    "NonConvergence",
    "PreconditionViolation",
    "RepresentationOverflow",
    "DrivingInput",
    "LimitSolution",
    "NoiseSpec",
    "explicit_tail_solution",
    "make_limit_drivers",
    "sample_brownian",
    "simulate_limit_diffusion",
    "solve_limit_system",
    "INFINITY",
    "reflect_lower",
    "reflect_upper",
    "Grid",
    "GridPath",
    "scale_diffusion",
    "scale_fluid",
    "unscale_diffusion",
    "CountState",
    "GridObservation",
    "ModelParams",
    "StepPath",
    "TruncationCounters",
    "WaitRecords",
    "observe_counts",
    "simulate_jsq_counts",
    "simulate_jsq_per_queue",
    "simulate_jsq_truncated",
]
