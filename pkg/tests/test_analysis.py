import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from jsqhw.analysis import (MomentAccumulator, aggregate_waiting_time, delayed_wait_distribution,
                            estimate_hitting_probability, extract_martingales,
                            ks_critical_value, ks_exponential, ks_two_sample,
                            martingales_from_observation, observe_replications, run_stats,
                            trend_slope, wilson_interval)
from jsqhw.errors import EmptySample, GridOutOfRange, MismatchedInputs
from jsqhw.scaling import Grid
from jsqhw.sim_core import (CountState, ModelParams, StepPath, TruncationCounters, WaitRecords,
                            simulate_jsq_counts, simulate_jsq_per_queue,
                            simulate_jsq_truncated)


class TestAggregateWait:
    def test_nobody_waits(self):
        path = StepPath(np.array([0.0, 1.0]), np.array([[3, 0], [2, 0]]), 2.0)
        assert aggregate_waiting_time(path, 2.0) == 0.0

    def test_rectangle(self):
        path = StepPath(np.array([0.0]), np.array([[5, 3, 0]]), 2.0)
        assert aggregate_waiting_time(path, 2.0) == 6.0

    def test_out_of_range(self):
        path = StepPath(np.array([0.0]), np.array([[5, 3, 0]]), 2.0)
        with pytest.raises(GridOutOfRange):
            aggregate_waiting_time(path, 3.0)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32), s=st.floats(0, 1), t=st.floats(0, 1))
    def test_additive(self, seed, s, t):
        s, t = sorted((3 * s, 3 * t))
        p = ModelParams(n=100, beta=1.0, k_max=5, horizon=3.0, seed=seed)
        path = simulate_jsq_counts(p, CountState.from_scaled([0, 1.5, 0.5], 100, 5))
        whole = aggregate_waiting_time(path, t)
        first = aggregate_waiting_time(path, s)
        # integral over [s, t] computed independently on a shifted path
        idx = path.index_at(s)
        shifted = StepPath(np.concatenate([[0.0], path.times[idx + 1:] - s]),
                           path.states[idx:], path.horizon - s)
        rest = aggregate_waiting_time(shifted, t - s)
        assert whole == pytest.approx(first + rest, rel=1e-12, abs=1e-12)

    def test_run_stats(self):
        n = 200
        p = ModelParams(n=n, beta=1.0, k_max=5, horizon=3.0, seed=2)
        path, rec = simulate_jsq_per_queue(p, CountState.from_scaled([0, 1.0], n, 5).lengths(n))
        rs = run_stats(path, n, 3.0, rec)
        assert rs.agg_wait >= 0 and rs.scaled_agg_wait == pytest.approx(rs.agg_wait / math.sqrt(n))
        mask = rec.arrival_times <= 3.0
        assert rs.delayed_fraction == pytest.approx(len(rs.delayed_waits) / mask.sum())
        assert rs.hit_time is None
        assert len(rs.terminal_scaled_state) == 5


def _truncated_run(n=400, seed=3, horizon=2.0):
    p = ModelParams(n=n, beta=1.0, k_max=3, horizon=horizon, seed=seed)
    q0 = CountState.from_scaled([0, 1.0, 0.5], n, 3)
    path, counters = simulate_jsq_truncated(p, q0)
    return p, q0, path, counters


class TestMartingales:
    def test_horizon_zero(self):
        p = ModelParams(n=50, beta=1.0, k_max=3, horizon=0.0)
        path, c = simulate_jsq_truncated(p, (50, 2, 0))
        m = extract_martingales(path, c, p, Grid(0.0, 1.0, 1))
        assert np.all(m.values == 0) and np.all(m.qv == 0)

    def test_compensator_identity(self):
        p, q0, path, counters = _truncated_run()
        grid = Grid.span(2.0, 0.01)
        m = extract_martingales(path, counters, p, grid)
        root = math.sqrt(p.n)
        t = grid.times()
        # arrivals: accepted up-steps plus rejected arrivals
        d = np.diff(path.states.astype(np.int64), axis=0)
        up_t = path.times[1:][d.sum(axis=1) > 0]
        a = np.searchsorted(up_t, t, side="right") + np.searchsorted(counters.u2_events, t,
                                                                     side="right")
        assert np.allclose(m.values[:, 0] + p.lambda_n * root * t, a / root, rtol=0, atol=1e-12)
        for i in range(3):
            dep_t = path.times[1:][d[:, i] < 0]
            count = np.searchsorted(dep_t, t, side="right")
            assert np.allclose(m.values[:, i + 1] + m.qv[:, i + 1] * root, count / root,
                               rtol=0, atol=1e-9)

    def test_qv_monotone_and_bounded(self):
        p, q0, path, counters = _truncated_run()
        grid = Grid.span(2.0, 0.01)
        m = extract_martingales(path, counters, p, grid)
        assert np.all(np.diff(m.qv, axis=0) >= -1e-15) and np.all(m.qv[0] == 0)
        t = grid.times()
        arrivals = (m.values[:, 0] + p.lambda_n * math.sqrt(p.n) * t) * math.sqrt(p.n)
        for i in (2, 3):
            bound = t / p.n * (q0.q[i - 1] + np.rint(arrivals[-1]))
            assert np.all(m.qv[:, i] <= bound + 1e-12)

    def test_observation_route_agrees(self):
        p, q0, path, counters = _truncated_run()
        grid = Grid.span(2.0, 0.25)
        a = extract_martingales(path, counters, p, grid)
        obs = observe_replications(p, q0, grid.times(), 1, truncated=True)[0]
        b = martingales_from_observation(obs, p)
        assert np.allclose(a.values, b.values, rtol=0, atol=1e-9)
        assert np.allclose(a.qv, b.qv, rtol=0, atol=1e-12)

    def test_mismatch(self):
        p, q0, path, counters = _truncated_run()
        grid = Grid.span(2.0, 0.5)
        bad = TruncationCounters(counters.u1_events[:-1], counters.u2_events)
        with pytest.raises(MismatchedInputs):
            extract_martingales(path, bad, p, grid)
        other = ModelParams(n=p.n, beta=1.0, k_max=4, horizon=2.0)
        with pytest.raises(MismatchedInputs):
            extract_martingales(path, counters, other, grid)

    def test_level2_variance_matches_qv(self):
        means = {}
        for n in (100, 10_000):
            p = ModelParams(n=n, beta=2.0, k_max=3, horizon=2.0, seed=77)
            q0 = CountState.from_scaled([0, 1.0, 0.5], n, 3)
            obs = observe_replications(p, q0, [2.0], 1000, truncated=True)
            ms = [martingales_from_observation(o, p) for o in obs]
            m2 = np.array([m.values[0, 2] for m in ms])
            qv2 = np.array([m.qv[0, 2] for m in ms])
            se = m2.var(ddof=1) * math.sqrt(2.0 / (len(m2) - 1))
            assert abs(m2.var(ddof=1) - qv2.mean()) <= 3 * se + 3 * qv2.std() / math.sqrt(1000)
            means[n] = qv2.mean()
        assert means[10_000] < means[100]


class TestHitting:
    def test_saturated_start(self):
        n = 30
        rows = estimate_hitting_probability([n], 1.0, lambda n: CountState((n, n, 0)), 1.0,
                                            replications=50)
        assert rows[0].p_hat == 1.0 and rows[0].hits == 50
        obs = observe_replications(ModelParams(n=n, beta=1.0, k_max=3, horizon=1.0),
                                   CountState((n, n, 0)), [], 3, truncated=True)
        assert all(o.hit_time == 0.0 for o in obs)

    def test_small_system(self):
        rows = estimate_hitting_probability([4, 9], 0.5, [0.0], 5.0, replications=400)
        assert rows[0].p_hat > rows[1].p_hat > 0
        assert rows[0].ci_low <= rows[0].p_hat <= rows[0].ci_high

    def test_large_n_rare(self):
        rows = estimate_hitting_probability([10_000], 2.0, [0.0], 5.0, replications=1000,
                                            seed=12)
        assert rows[0].p_hat <= 0.01

    def test_wilson(self):
        lo, hi = wilson_interval(0, 100)
        assert lo == 0.0 and 0.03 < hi < 0.04
        lo, hi = wilson_interval(100, 100)
        assert hi == 1.0
        lo, hi = wilson_interval(50, 100)
        assert lo == pytest.approx(0.4038, abs=1e-4) and hi == pytest.approx(0.5962, abs=1e-4)


class TestKS:
    def test_identical(self):
        a = np.random.default_rng(0).normal(size=50)
        assert ks_two_sample(a, a) == 0.0

    def test_disjoint(self):
        assert ks_two_sample([1, 2, 3], [4, 5]) == 1.0

    def test_hand_example(self):
        assert ks_two_sample([1, 2, 3], [2, 3, 4]) == pytest.approx(1 / 3)

    def test_empty(self):
        with pytest.raises(EmptySample):
            ks_two_sample([], [1.0])

    # scipy's p-value for tiny samples divides by zero; only the statistic is used
    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(-800, 800), min_size=1, max_size=40),
           st.lists(st.integers(-800, 800), min_size=1, max_size=40))
    def test_symmetric_invariant_and_scipy(self, a, b):
        # values on a 1/8 grid keep arctan strictly increasing in floats
        a = [v / 8 for v in a]
        b = [v / 8 for v in b]
        d = ks_two_sample(a, b)
        assert d == ks_two_sample(b, a)
        assert d == pytest.approx(stats.ks_2samp(a, b, method="asymp").statistic, abs=1e-12)
        f = np.arctan  # strictly increasing
        assert ks_two_sample(f(np.array(a)) * 3 + 1, f(np.array(b)) * 3 + 1) == \
            pytest.approx(d, abs=1e-12)

    def test_exponential_against_scipy(self):
        x = np.random.default_rng(4).exponential(size=300)
        assert ks_exponential(x) == pytest.approx(stats.kstest(x, "expon").statistic, abs=1e-12)
        assert ks_critical_value(300) == pytest.approx(stats.kstwo.ppf(0.99, 300))


class TestDelayedWaits:
    def test_all_zero(self):
        with pytest.raises(EmptySample):
            delayed_wait_distribution(WaitRecords(np.arange(3.0), np.zeros(3)))

    def test_summary(self):
        w = np.array([0.0, 0.5, 0.0, 1.5, 1.0])
        s = delayed_wait_distribution(WaitRecords(np.arange(5.0), w))
        assert s.count == 3 and s.mean == pytest.approx(1.0)
        assert s.ks_critical_01 == pytest.approx(stats.kstwo.ppf(0.99, 3))

    def test_per_queue_exp1(self):
        n = 400
        p = ModelParams(n=n, beta=1.0, k_max=5, horizon=5.0, seed=101)
        waits = np.concatenate([
            simulate_jsq_per_queue(p, CountState.all_busy(n, 5).lengths(n), replication=r)[1].waits
            for r in range(10)])
        s = delayed_wait_distribution(WaitRecords(np.zeros(len(waits)), waits))
        assert abs(s.mean - 1.0) <= 3 * s.sem
        assert s.ks_statistic < s.ks_critical_01


class TestReducers:
    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=60), st.integers(0, 60))
    def test_merge_equals_pooled(self, values, cut):
        cut = min(cut, len(values))
        a = MomentAccumulator().add(values[:cut])
        b = MomentAccumulator().add(values[cut:])
        merged = a.merge(b)
        assert merged.count == len(values)
        assert merged.mean == pytest.approx(np.mean(values), abs=1e-9)
        assert merged.variance == pytest.approx(np.var(values, ddof=1), rel=1e-9, abs=1e-6)

    def test_order_independent(self):
        x = np.random.default_rng(1).normal(size=(8, 25))
        fwd = MomentAccumulator()
        for row in x:
            fwd.merge(MomentAccumulator().add(row))
        rev = MomentAccumulator()
        for row in x[::-1]:
            rev.merge(MomentAccumulator().add(row))
        assert fwd.mean == pytest.approx(rev.mean) and fwd.variance == pytest.approx(rev.variance)

    def test_trend_slope(self):
        x = np.array([0.0, 1.0, 2.0, 3.0])
        slope, se = trend_slope(x, 2 * x + 1, np.ones(4))
        assert slope == pytest.approx(2.0) and se == pytest.approx(1 / math.sqrt(5))


def test_replications_independent_of_workers():
    p = ModelParams(n=100, beta=1.0, k_max=4, horizon=1.0, seed=5)
    q0 = CountState.all_busy(100, 4)
    a = observe_replications(p, q0, [0.5, 1.0], 6, workers=1)
    b = observe_replications(p, q0, [0.5, 1.0], 6, workers=2)
    for x, y in zip(a, b):
        assert np.array_equal(x.states, y.states) and np.array_equal(x.integrals, y.integrals)
