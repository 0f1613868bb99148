"""Compare the compiled event loops with the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--events 200000]

Both backends consume the same random stream, so the script also checks
that they return identical event sequences before reporting timings.
"""

import argparse
import time

import numpy as np

from jsqhw import _kernels_py, rng
from jsqhw.sim_core import CountState, ModelParams

try:
    from jsqhw import _kernels
except ImportError:
    _kernels = None


def _counts_args(params, events):
    q0 = np.asarray(CountState.all_busy(params.n, params.k_max).q, dtype=np.int64)
    return (q0, params.n, params.arrival_rate, params.horizon, False,
            rng.bit_generator(params.seed), np.empty(0), int(1.5 * events) + 1024)


def _per_queue_args(params, events):
    lengths = np.asarray(CountState.all_busy(params.n, params.k_max).lengths(params.n))
    return (lengths, params.k_max, params.arrival_rate, params.horizon,
            rng.bit_generator(params.seed, stream="per_queue"), np.empty(0),
            int(1.5 * events) + 1024, int(events) + 1024)


def _time(fn, args, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn(*args())
        best = min(best, time.perf_counter() - start)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--events", type=int, default=200_000)
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    params = ModelParams(n=args.n, beta=1.0, k_max=6, horizon=1.0)
    rate = params.arrival_rate + params.n
    params = ModelParams(n=args.n, beta=1.0, k_max=6, horizon=args.events / rate)

    print(f"n={params.n}  horizon={params.horizon:.4g}  ~{args.events} events")
    print(f"{'kernel':<15}{'backend':<10}{'seconds':>10}{'ns/event':>12}{'speedup':>10}")
    cases = [("run_counts", _counts_args), ("run_per_queue", _per_queue_args)]
    for name, make in cases:
        py_t, py_out = _time(getattr(_kernels_py, name), lambda: make(params, args.events),
                             args.repeat)
        m = len(py_out["event_times"])
        print(f"{name:<15}{'python':<10}{py_t:>10.3f}{1e9 * py_t / m:>12.0f}{1.0:>10.1f}")
        if _kernels is None:
            print(f"{name:<15}{'cython':<10}{'not built':>10}")
            continue
        cy_t, cy_out = _time(getattr(_kernels, name), lambda: make(params, args.events),
                             args.repeat)
        same = (np.array_equal(cy_out["event_times"], py_out["event_times"])
                and np.array_equal(cy_out["event_codes"], py_out["event_codes"]))
        print(f"{name:<15}{'cython':<10}{cy_t:>10.3f}{1e9 * cy_t / m:>12.0f}"
              f"{py_t / cy_t:>10.1f}   identical={same}")


if __name__ == "__main__":
    main()
