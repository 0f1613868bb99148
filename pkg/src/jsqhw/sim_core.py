"""Exact CTMC simulation of the M/M/n join-the-shortest-queue system.

The default simulator works on counts ``q[i] = #queues with at least i+1
customers``; this is a Markov descriptor for JSQ, so an event costs
O(k_max) regardless of ``n``.  A per-queue simulator with explicit FIFO
queues exists for waiting-time measurement.

Arrivals come at rate ``lambda_n * n`` with ``lambda_n = 1 - beta/sqrt(n)``;
level ``i`` loses a customer at rate ``q[i] - q[i+1]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import rng
from ._backend import kernels
from .errors import GridOutOfRange, InvalidParams, RepresentationOverflow

_OK, _OVERFLOW, _CAPACITY = 0, 1, 2


@dataclass(frozen=True)
class ModelParams:
    n: int
    beta: float
    k_max: int
    horizon: float
    seed: int = 0

    def __post_init__(self):
        if int(self.n) != self.n or not 1 <= self.n < 2**31:
            raise InvalidParams(f"n must be a positive 32-bit integer, got {self.n}")
        if not self.beta > 0:
            raise InvalidParams(f"beta must be positive, got {self.beta}")
        if self.beta >= math.sqrt(self.n):
            raise InvalidParams(
                f"beta={self.beta} must be below sqrt(n)={math.sqrt(self.n):.6g} "
                "so that 0 < lambda_n < 1")
        if int(self.k_max) != self.k_max or self.k_max < 2:
            raise InvalidParams(f"k_max must be an integer >= 2, got {self.k_max}")
        if not self.horizon >= 0:
            raise InvalidParams(f"horizon must be nonnegative, got {self.horizon}")
        if not 0 <= self.seed < 2**64:
            raise InvalidParams("seed must be a 64-bit unsigned integer")

    @property
    def lambda_n(self) -> float:
        return 1.0 - self.beta / math.sqrt(self.n)

    @property
    def arrival_rate(self) -> float:
        """Total arrival rate ``lambda_n * n``."""
        return self.lambda_n * self.n


@dataclass(frozen=True)
class CountState:
    """Counts ``q[i]`` of queues holding at least ``i+1`` customers."""

    q: tuple

    def __post_init__(self):
        object.__setattr__(self, "q", tuple(int(v) for v in self.q))

    @classmethod
    def empty(cls, k_max):
        return cls((0,) * k_max)

    @classmethod
    def all_busy(cls, n, k_max):
        """Every server busy, nobody waiting: the zero scaled state."""
        return cls((n,) + (0,) * (k_max - 1))

    @classmethod
    def from_scaled(cls, x, n, k_max):
        """Round a diffusion-scaled state ``(X_1, X_2, ...)`` to counts."""
        x = list(x) + [0.0] * (k_max - len(x))
        if len(x) > k_max:
            raise InvalidParams("scaled state longer than k_max")
        root = math.sqrt(n)
        q = [int(round(n + x[0] * root))] + [int(round(v * root)) for v in x[1:]]
        return cls(q)

    @classmethod
    def from_lengths(cls, lengths, k_max):
        lengths = np.asarray(lengths, dtype=np.int64)
        return cls([int(np.count_nonzero(lengths >= i + 1)) for i in range(k_max)])

    def validate(self, n, k_max):
        q = self.q
        if len(q) != k_max:
            raise InvalidParams(f"initial state has {len(q)} levels, expected k_max={k_max}")
        if q[0] > n or q[-1] < 0 or any(a < b for a, b in zip(q, q[1:])):
            raise InvalidParams(f"initial counts {q} violate n >= q1 >= q2 >= ... >= 0")

    def lengths(self, n):
        """One queue-length vector inducing these counts (longest queues first)."""
        out = np.zeros(n, dtype=np.int64)
        for level in self.q:
            out[:level] += 1
        return out


@dataclass
class StepPath:
    """Right-continuous piecewise-constant path; ``states[j]`` holds on
    ``[times[j], times[j+1])`` and the last state holds up to ``horizon``."""

    times: np.ndarray
    states: np.ndarray
    horizon: float

    def __len__(self):
        return len(self.times)

    @property
    def k(self):
        return self.states.shape[1]

    def index_at(self, t):
        t = np.asarray(t, dtype=np.float64)
        if np.any(t < self.times[0]) or np.any(t > self.horizon):
            raise GridOutOfRange(f"evaluation outside [0, {self.horizon}]")
        return np.searchsorted(self.times, t, side="right") - 1

    def value_at(self, t):
        return self.states[self.index_at(t)]


@dataclass
class TruncationCounters:
    """Event times feeding the two barrier counters of the truncated system."""

    u1_events: np.ndarray
    u2_events: np.ndarray

    def u1(self, t):
        return int(np.searchsorted(self.u1_events, t, side="right"))

    def u2(self, t):
        return int(np.searchsorted(self.u2_events, t, side="right"))


@dataclass
class WaitRecords:
    """Waiting time of every customer arriving in ``[0, horizon]``."""

    arrival_times: np.ndarray
    waits: np.ndarray

    @property
    def total(self):
        return len(self.waits)

    @property
    def delayed_fraction(self):
        if not self.total:
            return 0.0
        return float(np.count_nonzero(self.waits > 0)) / self.total


@dataclass
class GridObservation:
    """Grid snapshot of one run, without storing the event path.

    Row ``g`` holds values at ``grid[g]`` (right-continuous): the state, the
    cumulative arrival count ``A``, departure counts per level, time integrals
    of each ``q[i]``, and the two barrier counters.
    """

    grid: np.ndarray
    states: np.ndarray
    arrivals: np.ndarray
    departures: np.ndarray
    integrals: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    hit_time: float
    qmin: np.ndarray
    qmax: np.ndarray
    n_events: int
    meta: dict = field(default_factory=dict)


def _check(params, initial):
    if not isinstance(initial, CountState):
        initial = CountState(initial)
    initial.validate(params.n, params.k_max)
    return initial


def _capacity_guess(params):
    expected = (params.arrival_rate + params.n) * params.horizon
    return int(1.2 * expected + 10 * math.sqrt(expected) + 1024)


def _run_counts(params, initial, grid, truncated, replication, capacity):
    q0 = np.asarray(initial.q, dtype=np.int64)
    grid = np.ascontiguousarray(grid, dtype=np.float64)
    while True:
        out = kernels.run_counts(
            q0, params.n, params.arrival_rate, float(params.horizon), truncated,
            rng.bit_generator(params.seed, replication, "ctmc"), grid, capacity)
        if out["status"] == _CAPACITY:
            capacity *= 2
            continue
        if out["status"] == _OVERFLOW:
            raise RepresentationOverflow(
                f"arrival at t={out['t_stop']:.6g} found all {params.k_max} "
                f"levels saturated; increase k_max")
        return out


def _path_from_codes(q0, times, codes, horizon):
    keep = codes != 0
    times, codes = times[keep], codes[keep]
    m, K = len(times), len(q0)
    states = np.zeros((m + 1, K), dtype=np.int32)
    states[0] = q0
    rows = np.arange(1, m + 1)
    up = codes > 0
    states[rows[up], codes[up].astype(np.int64) - 1] = 1
    states[rows[~up], -codes[~up].astype(np.int64) - 1] = -1
    np.cumsum(states, axis=0, out=states)
    return StepPath(np.concatenate([[0.0], times]), states, float(horizon))


def simulate_jsq_counts(params: ModelParams, initial, *, replication: int = 0) -> StepPath:
    """Exact event path of the untruncated system on ``[0, horizon]``.

    Raises:
        RepresentationOverflow: an arrival found every level up to ``k_max``
            saturated.
    """
    initial = _check(params, initial)
    out = _run_counts(params, initial, np.empty(0), False, replication,
                      _capacity_guess(params))
    return _path_from_codes(np.asarray(initial.q), out["event_times"],
                            out["event_codes"], params.horizon)


def simulate_jsq_truncated(params: ModelParams, initial, *, replication: int = 0):
    """Truncated system: arrivals that would create a third customer in
    every queue are rejected.  Driven by the same event stream as
    :func:`simulate_jsq_counts`, so coupled runs coincide until ``Q_2 = n``.
    """
    initial = _check(params, initial)
    out = _run_counts(params, initial, np.empty(0), True, replication,
                      _capacity_guess(params))
    times, codes = out["event_times"], out["event_codes"]
    counters = TruncationCounters(
        u1_events=times[(codes == 0) | (codes >= 2)].copy(),
        u2_events=times[codes == 0].copy())
    path = _path_from_codes(np.asarray(initial.q), times, codes, params.horizon)
    return path, counters


def observe_counts(params: ModelParams, initial, grid, *, truncated: bool = False,
                   replication: int = 0) -> GridObservation:
    """Run one replication and keep only grid snapshots and running extremes."""
    initial = _check(params, initial)
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size and (grid[0] < 0 or grid[-1] > params.horizon or np.any(np.diff(grid) < 0)):
        raise GridOutOfRange("observation grid must be sorted inside [0, horizon]")
    out = _run_counts(params, initial, grid, truncated, replication, 0)
    return GridObservation(
        grid=grid, states=out["grid_states"], arrivals=out["grid_arrivals"],
        departures=out["grid_departures"], integrals=out["grid_integrals"],
        u1=out["grid_u1"], u2=out["grid_u2"], hit_time=float(out["hit_time"]),
        qmin=out["qmin"], qmax=out["qmax"], n_events=int(out["n_events"]))


def simulate_jsq_per_queue(params: ModelParams, initial_lengths: Sequence[int], *,
                           replication: int = 0):
    """Explicit FIFO queues; ties for the shortest queue broken uniformly.

    Returns the induced counts path and the waiting time of every customer
    arriving by ``horizon`` (0 for customers finding an idle server).
    """
    lengths = np.asarray(initial_lengths, dtype=np.int64)
    if lengths.shape != (params.n,):
        raise InvalidParams(f"need {params.n} initial queue lengths, got {lengths.shape}")
    if np.any(lengths < 0) or np.any(lengths > params.k_max):
        raise InvalidParams("initial queue lengths must lie in [0, k_max]")
    capacity = _capacity_guess(params)
    customers = int(1.2 * params.arrival_rate * params.horizon + 1024)
    while True:
        out = kernels.run_per_queue(
            lengths, params.k_max, params.arrival_rate, float(params.horizon),
            rng.bit_generator(params.seed, replication, "per_queue"),
            np.empty(0), capacity, customers)
        if out["status"] == _CAPACITY:
            capacity *= 2
            customers *= 2
            continue
        if out["status"] == _OVERFLOW:
            raise RepresentationOverflow("an arrival needed a queue longer than k_max")
        break
    q0 = CountState.from_lengths(lengths, params.k_max).q
    path = _path_from_codes(np.asarray(q0), out["event_times"], out["event_codes"],
                            params.horizon)
    return path, WaitRecords(out["arrival_times"], out["waits"])
