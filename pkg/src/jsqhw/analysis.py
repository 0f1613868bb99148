"""Statistical checks on simulated paths: martingales, hitting times,
waiting times, fluid limits and two-sample convergence comparisons."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EmptySample, GridOutOfRange, MismatchedInputs
from .limit_solver import NoiseSpec, simulate_limit_diffusion
from .scaling import Grid
from .sim_core import CountState, ModelParams, observe_counts


@dataclass
class RunStats:
    hit_time: float | None
    agg_wait: float
    scaled_agg_wait: float
    delayed_waits: list = field(default_factory=list)
    delayed_fraction: float = 0.0
    terminal_scaled_state: list = field(default_factory=list)


@dataclass
class MartingalePath:
    """``values[:, 0]`` is the scaled arrival martingale, ``values[:, i]`` the
    level-``i`` departure martingale; ``qv`` holds the matching predictable
    quadratic variations."""

    t0: float
    dt: float
    values: np.ndarray
    qv: np.ndarray

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(len(self.values))


@dataclass
class HitRow:
    n: int
    p_hat: float
    ci_low: float
    ci_high: float
    hits: int
    replications: int


@dataclass
class WaitSummary:
    count: int
    mean: float
    sem: float
    ks_statistic: float
    ks_critical_01: float


@dataclass
class MomentAccumulator:
    """Mergeable count/mean/M2 reducer (Chan et al. pairwise update)."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def add(self, values):
        values = np.asarray(values, dtype=np.float64).ravel()
        if values.size:
            other = MomentAccumulator(values.size, float(values.mean()),
                                      float(((values - values.mean()) ** 2).sum()))
            self.merge(other)
        return self

    def merge(self, other):
        if other.count == 0:
            return self
        total = self.count + other.count
        delta = other.mean - self.mean
        self.m2 += other.m2 + delta * delta * self.count * other.count / total
        self.mean += delta * other.count / total
        self.count = total
        return self

    @property
    def variance(self):
        return self.m2 / (self.count - 1) if self.count > 1 else math.nan

    @property
    def sem(self):
        return math.sqrt(self.variance / self.count) if self.count > 1 else math.nan

    @property
    def variance_se(self):
        """Standard error of the sample variance, Gaussian approximation."""
        return self.variance * math.sqrt(2.0 / (self.count - 1)) if self.count > 1 else math.nan


def _segments(path, t):
    if t < 0 or t > path.horizon:
        raise GridOutOfRange(f"t={t} outside [0, {path.horizon}]")
    end = int(np.searchsorted(path.times, t, side="right"))
    edges = np.append(path.times[:end], t)
    return path.states[:end].astype(np.float64), np.diff(edges)


def aggregate_waiting_time(path, t) -> float:
    """``Z_t = int_0^t sum_{i>=2} Q_i(s) ds``, summed exactly over segments."""
    states, widths = _segments(path, t)
    return float(np.dot(states[:, 1:].sum(axis=1), widths))


def run_stats(path, n, t, records=None) -> RunStats:
    hits = np.nonzero(path.states[:, 1] >= n)[0] if path.k > 1 else []
    hit = float(path.times[hits[0]]) if len(hits) and path.times[hits[0]] <= t else None
    z = aggregate_waiting_time(path, t)
    q = path.value_at(t).astype(np.float64)
    x = q / math.sqrt(n)
    x[0] = (q[0] - n) / math.sqrt(n)
    delayed = []
    frac = 0.0
    if records is not None:
        mask = records.arrival_times <= t
        w = records.waits[mask]
        delayed = w[w > 0].tolist()
        frac = len(delayed) / len(w) if len(w) else 0.0
    return RunStats(hit, z, z / math.sqrt(n), delayed, frac, x.tolist())


def _cumulative_integrals(path, times):
    """``int_0^t q_i ds`` for every level at each requested time."""
    widths = np.diff(path.times)
    cum = np.zeros((len(path.times), path.k))
    np.cumsum(path.states[:-1] * widths[:, None], axis=0, out=cum[1:])
    idx = path.index_at(times)
    return cum[idx] + path.states[idx] * (times - path.times[idx])[:, None]


def extract_martingales(path, counters, params: ModelParams, grid) -> MartingalePath:
    """Scaled arrival and departure martingales of a truncated run.

    Arrivals are the state increments plus rejected arrivals (``u2``);
    departures at level ``i`` are the decrements of ``q[i]``.

    Raises:
        MismatchedInputs: counters, path and params do not describe one run.
    """
    if path.k != params.k_max or path.horizon != params.horizon:
        raise MismatchedInputs("path does not match params (k_max or horizon)")
    d = np.diff(path.states.astype(np.int64), axis=0)
    if np.any(np.abs(d).sum(axis=1) != 1):
        raise MismatchedInputs("path steps must change exactly one level by one")
    ev_t = path.times[1:]
    level = np.argmax(d != 0, axis=1)
    up = d[np.arange(len(d)), level] > 0
    # every arrival finding all servers busy is a u1 event
    busy_arrivals = np.sort(np.concatenate([ev_t[up & (level >= 1)], counters.u2_events]))
    if not np.array_equal(busy_arrivals, counters.u1_events):
        raise MismatchedInputs("u1 events disagree with the path's busy-server arrivals")
    if len(counters.u2_events) and counters.u2_events[-1] > path.horizon:
        raise MismatchedInputs("u2 events beyond the path horizon")

    grid = Grid(*grid)
    times = np.clip(grid.times(), 0.0, path.horizon)
    if grid.times()[-1] > path.horizon * (1 + 1e-12) + 1e-12:
        raise GridOutOfRange("grid beyond horizon")
    arrivals = (np.searchsorted(ev_t[up], times, side="right")
                + np.searchsorted(counters.u2_events, times, side="right"))
    departures = np.column_stack([
        np.searchsorted(ev_t[(~up) & (level == i)], times, side="right")
        for i in range(path.k)])
    integ = _cumulative_integrals(path, times)
    return _martingales(times, grid, params.n, params.lambda_n, arrivals, departures, integ)


def _martingales(times, grid, n, lam, arrivals, departures, integ):
    root = math.sqrt(n)
    K = departures.shape[1]
    # compensator of level i: int (q_i - q_{i+1})
    comp = integ - np.column_stack([integ[:, 1:], np.zeros(len(integ))])
    values = np.empty((len(times), K + 1))
    qv = np.empty_like(values)
    values[:, 0] = arrivals / root - lam * root * times
    qv[:, 0] = lam * times
    values[:, 1:] = (departures - comp) / root
    qv[:, 1:] = comp / n
    return MartingalePath(grid.t0, grid.dt, values, qv)


def martingales_from_observation(obs, params: ModelParams) -> MartingalePath:
    """Same martingales as :func:`extract_martingales` from a grid observation."""
    g = obs.grid
    dt = float(g[1] - g[0]) if len(g) > 1 else 1.0
    grid = Grid(float(g[0]), dt, len(g))
    return _martingales(g, grid, params.n, params.lambda_n, obs.arrivals,
                        obs.departures, obs.integrals)


def wilson_interval(hits, total, z=1.959963984540054):
    if total <= 0:
        return (0.0, 1.0)
    p = hits / total
    denom = 1 + z * z / total
    centre = (p + z * z / (2 * total)) / denom
    half = z * math.sqrt(p * (1 - p) / total + z * z / (4 * total * total)) / denom
    lo = 0.0 if hits == 0 else max(0.0, centre - half)
    hi = 1.0 if hits == total else min(1.0, centre + half)
    return (lo, hi)


def _initial(x0, n, k_max):
    if isinstance(x0, CountState):
        return x0
    if callable(x0):
        return x0(n)
    return CountState.from_scaled(x0, n, k_max)


def _observe_chunk(args):
    params, initial, grid, truncated, reps = args
    return [observe_counts(params, initial, grid, truncated=truncated, replication=r)
            for r in reps]


def observe_replications(params, initial, grid, replications, *, truncated=False,
                         workers=1, first=0):
    """Grid observations for replications ``first .. first+replications-1``.

    Each replication owns its random stream, so the result does not depend
    on ``workers``.
    """
    reps = list(range(first, first + replications))
    if workers <= 1:
        return _observe_chunk((params, initial, grid, truncated, reps))
    chunks = [reps[i::workers] for i in range(workers)]
    out = [None] * len(reps)
    with ProcessPoolExecutor(workers) as pool:
        for chunk, res in zip(chunks, pool.map(
                _observe_chunk, [(params, initial, grid, truncated, c) for c in chunks])):
            for r, obs in zip(chunk, res):
                out[r - first] = obs
    return out


def estimate_hitting_probability(ns: Sequence[int], beta, x0, t, *, replications=10_000,
                                 seed=0, k_max=3, workers=1) -> list[HitRow]:
    """Monte Carlo ``P(sup_{s<=t} Q2(s) >= n)`` on the truncated system,
    with 95% Wilson intervals."""
    rows = []
    for n in ns:
        params = ModelParams(n=n, beta=beta, k_max=k_max, horizon=t, seed=seed)
        initial = _initial(x0, n, k_max)
        obs = observe_replications(params, initial, [], replications, truncated=True,
                                   workers=workers)
        hits = sum(1 for o in obs if not math.isnan(o.hit_time) and o.hit_time <= t)
        lo, hi = wilson_interval(hits, replications)
        rows.append(HitRow(n, hits / replications, lo, hi, hits, replications))
    return rows


def ks_two_sample(a, b) -> float:
    """Sup distance between the empirical CDFs of ``a`` and ``b``."""
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise EmptySample("both samples must be nonempty")
    pts = np.concatenate([a, b])
    fa = np.searchsorted(a, pts, side="right") / a.size
    fb = np.searchsorted(b, pts, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_exponential(samples) -> float:
    """One-sample KS statistic of ``samples`` against Exp(1)."""
    x = np.sort(np.asarray(samples, dtype=np.float64))
    if x.size == 0:
        raise EmptySample("no samples")
    m = x.size
    cdf = -np.expm1(-x)
    i = np.arange(1, m + 1)
    return float(max(np.max(i / m - cdf), np.max(cdf - (i - 1) / m)))


def ks_critical_value(m, alpha=0.01) -> float:
    """Critical value of the one-sample KS statistic for ``m`` samples."""
    from scipy.stats import kstwo
    return float(kstwo.ppf(1 - alpha, m))


def delayed_wait_distribution(records) -> WaitSummary:
    """Summary of the strictly positive waits in ``records``.

    Raises:
        EmptySample: nobody waited.
    """
    w = np.asarray(records.waits, dtype=np.float64)
    w = w[np.isfinite(w) & (w > 0)]
    if w.size == 0:
        raise EmptySample("no customer waited")
    sem = float(w.std(ddof=1) / math.sqrt(w.size)) if w.size > 1 else math.nan
    return WaitSummary(int(w.size), float(w.mean()), sem, ks_exponential(w),
                       ks_critical_value(w.size))


def scaled_observation(obs, n):
    """Diffusion-scaled states of a grid observation, shape ``(grid, k)``."""
    q = obs.states.astype(np.float64)
    x = q / math.sqrt(n)
    x[:, 0] = (q[:, 0] - n) / math.sqrt(n)
    return x


def limit_marginals(x0, beta, times, k, replications, *, seed=0, dt=1e-3, **solver_opts):
    """Samples of the limit diffusion at ``times``: array ``(reps, len(times), k)``."""
    times = np.asarray(times, dtype=np.float64)
    grid = Grid.span(float(times.max()), dt)
    idx = np.rint(times / dt).astype(int)
    out = np.empty((replications, len(times), k))
    spec = NoiseSpec(beta, seed, grid)
    for r in range(replications):
        sol = simulate_limit_diffusion(x0, spec, k, replication=r, **solver_opts)
        out[r] = sol.x.values[idx]
    return out


def prelimit_marginals(n, beta, x0, times, k_max, replications, *, seed=0,
                       truncated=False, workers=1):
    """Samples of the scaled chain ``X^n`` at ``times``: ``(reps, len(times), k_max)``."""
    times = np.asarray(times, dtype=np.float64)
    params = ModelParams(n=n, beta=beta, k_max=k_max, horizon=float(times.max()), seed=seed)
    obs = observe_replications(params, _initial(x0, n, k_max), times, replications,
                               truncated=truncated, workers=workers)
    return np.stack([scaled_observation(o, n) for o in obs])


def weak_convergence_table(ns, beta, x0, times, *, k=3, replications=2000, seed=0,
                           dt=1e-3, coords=(0, 1), workers=1, limit_samples=None):
    """KS distance between ``X_i^n(t)`` and the limit ``X_i(t)`` per (n, t, i).

    Returns rows of ``(n, t, coordinate (1-based), ks)``.
    """
    if limit_samples is None:
        limit_samples = limit_marginals(x0, beta, times, k, replications, seed=seed, dt=dt)
    rows = []
    for n in ns:
        pre = prelimit_marginals(n, beta, x0, times, k, replications, seed=seed, workers=workers)
        for ti, t in enumerate(times):
            for c in coords:
                rows.append((n, float(t), c + 1,
                             ks_two_sample(pre[:, ti, c], limit_samples[:, ti, c])))
    return rows


def waiting_sweep(ns, beta, x0, t, *, replications=200, seed=0, k_max=4, workers=1):
    """Per-n summaries of the scaled aggregate wait and the delayed fraction.

    Rows hold ``n``, mean/SE/99th percentile of ``Y_t = Z_t/sqrt(n)``, and
    mean/SE of ``sqrt(n) * (fraction of arrivals that had to wait)``.
    """
    rows = []
    for n in ns:
        params = ModelParams(n=n, beta=beta, k_max=k_max, horizon=t, seed=seed)
        obs = observe_replications(params, _initial(x0, n, k_max), [t], replications,
                                   workers=workers)
        root = math.sqrt(n)
        y = np.array([o.integrals[0, 1:].sum() / root for o in obs])
        frac = np.array([root * o.u1[0] / max(o.arrivals[0], 1) for o in obs])
        rows.append({
            "n": n,
            "mean_scaled_wait": float(y.mean()),
            "se_scaled_wait": float(y.std(ddof=1) / math.sqrt(len(y))),
            "p99_scaled_wait": float(np.quantile(y, 0.99)),
            "mean_scaled_delayed_fraction": float(frac.mean()),
            "se_scaled_delayed_fraction": float(frac.std(ddof=1) / math.sqrt(len(frac))),
        })
    return rows


def trend_slope(x, y, se):
    """Weighted least-squares slope of ``y`` on ``x`` and its standard error."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = 1.0 / np.maximum(np.asarray(se, dtype=np.float64), 1e-300) ** 2
    xm = np.sum(w * x) / np.sum(w)
    ym = np.sum(w * y) / np.sum(w)
    sxx = np.sum(w * (x - xm) ** 2)
    slope = np.sum(w * (x - xm) * (y - ym)) / sxx
    return float(slope), float(math.sqrt(1.0 / sxx))


def fluid_deviation(obs, n):
    """``sup_t |Psi_1 - 1|`` and ``sup_t Psi_i`` for ``i >= 2`` from running extremes."""
    return 1.0 - obs.qmin[0] / n, obs.qmax[1:] / n
