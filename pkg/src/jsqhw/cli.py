"""Command-line experiments.

A run is described by one JSON document (:class:`ExperimentConfig`); any
field can be overridden with ``--set path=value``.  Every run writes to its
own directory::

    meta.json        parameters, lambda_n, version, wall time
    config.json      the resolved configuration
    paths/*.csv      grid paths (``t,x1,...``)
    summary.csv      one row per table entry
    summary.jsonl    the same rows, one JSON object per line

Everything except the wall time in ``meta.json`` is a deterministic
function of the configuration.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from ._backend import BACKEND
from .analysis import (aggregate_waiting_time, delayed_wait_distribution,
                       estimate_hitting_probability, extract_martingales, fluid_deviation,
                       observe_replications, waiting_sweep, weak_convergence_table)
from .errors import ConfigError, EmptySample, JSQError
from .limit_solver import MAX_ITERS, TOL, WINDOW, NoiseSpec, simulate_limit_diffusion
from .scaling import Grid, format_csv, format_number, scale_diffusion
from .sim_core import (CountState, ModelParams, WaitRecords, simulate_jsq_counts,
                       simulate_jsq_per_queue, simulate_jsq_truncated)

MODES = ("simulate", "simulate-truncated", "limit", "compare", "waits", "sweep", "figure1")
PRESETS = ("empty", "all-busy")
SWEEPS = ("hitting", "waiting", "fluid")
OUTPUT_ENV = "JSQHW_OUTPUT_ROOT"

TOLERANCE_DEFAULTS = {
    "solver_tol": TOL,
    "window": WINDOW,
    "max_iters": MAX_ITERS,
    "fluid_psi1": 0.05,
    "fluid_tail": 0.02,
}

# Queues up to length 5 at n = 1e5.  The counts are a free choice (scaled
# state 0, 1.0, 0.30, 0.10, 0.028); override ``initial`` to try others.
FIGURE1 = {
    "params": {"n": 100_000, "beta": 2.0, "k_max": 6, "horizon": 10.0, "seed": 1},
    "initial": [100_000, 316, 95, 32, 9, 0],
    "grid": {"t0": 0.0, "dt": 1e-3, "count": None},
    "columns": 5,
}


@dataclass
class ParamsConfig:
    n: int = 1000
    beta: float = 1.0
    k_max: int = 4
    horizon: float = 5.0
    seed: int = 0


@dataclass
class GridConfig:
    t0: float = 0.0
    dt: float = 1e-3
    count: int | None = None


@dataclass
class ExperimentConfig:
    """Resolved experiment description.

    ``initial`` is a preset name, an explicit count vector of length
    ``k_max``, or ``{"scaled": [x1, x2, ...]}``.  ``ns`` lists the server
    counts for ``compare`` and ``sweep``.
    """

    mode: str
    params: ParamsConfig = field(default_factory=ParamsConfig)
    initial: object = "all-busy"
    replications: int = 1
    grid: GridConfig = field(default_factory=GridConfig)
    ns: list = field(default_factory=list)
    times: list = field(default_factory=lambda: [2.0])
    sweep: str = "hitting"
    columns: int | None = None
    workers: int = 1
    output: str | None = None
    tolerances: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("<root>", "configuration must be a JSON object")
        data = copy.deepcopy(data)
        mode = data.get("mode")
        if mode not in MODES:
            raise ConfigError("mode", f"expected one of {', '.join(MODES)}, got {mode!r}")
        if mode == "figure1":
            data = _overlay(copy.deepcopy(FIGURE1), data)
        _reject_unknown(data, {f.name for f in fields(cls)}, "")
        params = _section(ParamsConfig, data.pop("params", {}), "params")
        grid = _section(GridConfig, data.pop("grid", {}), "grid")
        cfg = cls(mode=mode, params=params, grid=grid,
                  **{k: v for k, v in data.items() if k != "mode"})
        cfg._coerce()
        cfg.validate()
        return cfg

    def _coerce(self):
        self.replications = _as(int, self.replications, "replications")
        self.workers = _as(int, self.workers, "workers")
        self.ns = [_as(int, v, "ns") for v in _as(list, self.ns, "ns")]
        self.times = [_as(float, v, "times") for v in _as(list, self.times, "times")]
        if self.columns is not None:
            self.columns = _as(int, self.columns, "columns")
        if self.output is not None:
            self.output = str(self.output)
        self.tolerances = _as(dict, self.tolerances, "tolerances")
        _reject_unknown(self.tolerances, set(TOLERANCE_DEFAULTS), "tolerances.")
        for key, v in self.tolerances.items():
            kind = int if key == "max_iters" else float
            self.tolerances[key] = _as(kind, v, f"tolerances.{key}")
        if isinstance(self.initial, (list, tuple)):
            self.initial = [_as(int, v, "initial") for v in self.initial]
        elif isinstance(self.initial, dict):
            _reject_unknown(self.initial, {"scaled"}, "initial.")
            self.initial = {"scaled": [_as(float, v, "initial.scaled")
                                       for v in _as(list, self.initial.get("scaled"),
                                                    "initial.scaled")]}
        elif self.initial not in PRESETS:
            raise ConfigError("initial", f"expected {PRESETS}, a count vector or "
                                         f"{{\"scaled\": [...]}}, got {self.initial!r}")

    def validate(self):
        p = self.params
        if self.replications < 1:
            raise ConfigError("replications", "must be a positive integer")
        if self.workers < 1:
            raise ConfigError("workers", "must be a positive integer")
        if not p.beta > 0:
            raise ConfigError("params.beta", "must be positive")
        if not p.horizon >= 0:
            raise ConfigError("params.horizon", "must be nonnegative")
        if not 0 <= p.seed < 2**64:
            raise ConfigError("params.seed", "must be a 64-bit unsigned integer")
        if p.k_max < 2:
            raise ConfigError("params.k_max", "must be at least 2")
        if self.mode in ("limit", "compare") and p.k_max < 3:
            raise ConfigError("params.k_max", "the limit system needs k_max >= 3")
        if not self.grid.dt > 0:
            raise ConfigError("grid.dt", "must be positive")
        if self.grid.t0 < 0:
            raise ConfigError("grid.t0", "must be nonnegative")
        if self.grid.count is not None:
            if self.grid.count < 1:
                raise ConfigError("grid.count", "must be positive")
            end = self.grid.t0 + self.grid.dt * (self.grid.count - 1)
            if end > p.horizon * (1 + 1e-12):
                raise ConfigError("grid.count", f"grid ends at {end:.6g}, past the horizon")
        if self.sweep not in SWEEPS:
            raise ConfigError("sweep", f"expected one of {SWEEPS}")
        for key in ("solver_tol", "window", "fluid_psi1", "fluid_tail"):
            if key in self.tolerances and not self.tolerances[key] > 0:
                raise ConfigError(f"tolerances.{key}", "must be positive")
        if self.columns is not None and not 1 <= self.columns <= p.k_max:
            raise ConfigError("columns", "must lie in [1, k_max]")

        if self.mode in ("compare", "sweep"):
            if not self.ns:
                raise ConfigError("ns", f"mode {self.mode} needs a nonempty list of n")
            if isinstance(self.initial, list):
                raise ConfigError("initial", "use a preset or scaled state when n varies")
            for n in self.ns:
                self._check_n(n, "ns")
        else:
            self._check_n(p.n, "params.n")
            self.initial_state(p.n)
        if self.mode == "compare":
            if not self.times or min(self.times) <= 0:
                raise ConfigError("times", "need positive comparison times")
            for t in self.times:
                if abs(t / self.grid.dt - round(t / self.grid.dt)) > 1e-6:
                    raise ConfigError("times", f"t={t} is not on the dt={self.grid.dt} grid")

    def _check_n(self, n, name):
        if not 1 <= n < 2**31:
            raise ConfigError(name, f"n={n} must be a positive 32-bit integer")
        if self.params.beta >= math.sqrt(n):
            raise ConfigError(name, f"beta={self.params.beta} must be below sqrt(n) for n={n}")

    def model(self, n=None):
        p = self.params
        return ModelParams(n=p.n if n is None else n, beta=p.beta, k_max=p.k_max,
                           horizon=p.horizon, seed=p.seed)

    def initial_state(self, n):
        k = self.params.k_max
        init = self.initial
        if init == "empty":
            state = CountState.empty(k)
        elif init == "all-busy":
            state = CountState.all_busy(n, k)
        elif isinstance(init, dict):
            if len(init["scaled"]) > k:
                raise ConfigError("initial.scaled", "longer than k_max")
            state = CountState.from_scaled(init["scaled"], n, k)
        else:
            state = CountState(init)
        try:
            state.validate(n, k)
        except JSQError as exc:
            raise ConfigError("initial", str(exc)) from None
        return state

    def scaled_initial(self, n):
        q = np.asarray(self.initial_state(n).q, dtype=np.float64)
        x = q / math.sqrt(n)
        x[0] = (q[0] - n) / math.sqrt(n)
        return x

    def time_grid(self):
        g = self.grid
        if g.count is not None:
            return Grid(g.t0, g.dt, g.count)
        return Grid.span(self.params.horizon, g.dt, g.t0)

    def tolerance(self, key):
        return self.tolerances.get(key, TOLERANCE_DEFAULTS[key])

    def solver_opts(self):
        return {"tol": self.tolerance("solver_tol"), "window": self.tolerance("window"),
                "max_iters": self.tolerance("max_iters")}


def _overlay(base, top):
    for key, v in top.items():
        if isinstance(v, dict) and isinstance(base.get(key), dict):
            base[key] = _overlay(base[key], v)
        else:
            base[key] = v
    return base


def _reject_unknown(data, known, prefix):
    for key in data:
        if key not in known:
            raise ConfigError(f"{prefix}{key}", "unknown field")


def _as(kind, value, name):
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(name, f"expected an integer, got {value!r}")
        return int(value)
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(name, f"expected a number, got {value!r}")
        return float(value)
    if not isinstance(value, kind):
        raise ConfigError(name, f"expected {kind.__name__}, got {value!r}")
    return value


def _section(cls, data, name):
    if not isinstance(data, dict):
        raise ConfigError(name, "expected an object")
    known = {f.name: f for f in fields(cls)}
    _reject_unknown(data, set(known), f"{name}.")
    out = cls()
    for key, v in data.items():
        if v is None and key == "count":
            setattr(out, key, None)
            continue
        kind = int if key in ("n", "k_max", "seed", "count") else float
        setattr(out, key, _as(kind, v, f"{name}.{key}"))
    return out


def apply_override(data, assignment):
    """Apply ``path=value`` to a config dict; ``value`` is JSON or a bare string."""
    if "=" not in assignment:
        raise ConfigError(assignment, "override must look like path=value")
    path, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    keys = path.strip().split(".")
    node = data
    for key in keys[:-1]:
        nxt = node.setdefault(key, {})
        if not isinstance(nxt, dict):
            raise ConfigError(path, f"{key} is not an object")
        node = nxt
    node[keys[-1]] = value
    return data


# --- pipelines ---------------------------------------------------------------
# Each returns (paths, rows, extra): paths maps a file stem to CSV text,
# rows is the summary table, extra maps file names to additional CSV tables.


def _pool_map(fn, items, workers):
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))


def _hit_time(path, n):
    idx = np.nonzero(path.states[:, 1] >= n)[0]
    return float(path.times[idx[0]]) if len(idx) else None


def _sim_task(args):
    cfg, r = args
    params = cfg.model()
    grid = cfg.time_grid()
    n = params.n
    path = simulate_jsq_counts(params, cfg.initial_state(n), replication=r)
    x = scale_diffusion(path, n, grid)
    cols = cfg.columns or params.k_max
    text = format_csv(["t"] + [f"x{i + 1}" for i in range(cols)],
                      np.column_stack([x.times, x.values[:, :cols]]))
    z = aggregate_waiting_time(path, params.horizon)
    row = {"replication": r, "events": len(path) - 1, "hit_time": _hit_time(path, n),
           "agg_wait": z, "scaled_agg_wait": z / math.sqrt(n)}
    row.update({f"x{i + 1}_end": float(v) for i, v in enumerate(x.values[-1])})
    row.update({f"x{i + 1}_sup": float(v) for i, v in enumerate(np.abs(x.values).max(axis=0))})
    return text, row


def run_simulate(cfg):
    out = _pool_map(_sim_task, [(cfg, r) for r in range(cfg.replications)], cfg.workers)
    paths = {f"rep{r:04d}": text for r, (text, _) in enumerate(out)}
    return paths, [row for _, row in out], {}


def _truncated_task(args):
    cfg, r = args
    params = cfg.model()
    grid = cfg.time_grid()
    n = params.n
    root = math.sqrt(n)
    path, counters = simulate_jsq_truncated(params, cfg.initial_state(n), replication=r)
    x = scale_diffusion(path, n, grid)
    t = np.clip(x.times, 0.0, params.horizon)
    u1 = np.searchsorted(counters.u1_events, t, side="right") / root
    u2 = np.searchsorted(counters.u2_events, t, side="right") / root
    k = params.k_max
    text = format_csv(["t"] + [f"x{i + 1}" for i in range(k)] + ["u1", "u2"],
                      np.column_stack([x.times, x.values, u1, u2]))
    mart = extract_martingales(path, counters, params, grid)
    mtext = format_csv(["t"] + [f"m{i}" for i in range(k + 1)] + [f"qv{i}" for i in range(k + 1)],
                       np.column_stack([mart.times, mart.values, mart.qv]))
    row = {"replication": r, "events": len(path) - 1, "hit_time": _hit_time(path, n),
           "u1_end": float(u1[-1]), "u2_end": float(u2[-1])}
    row.update({f"x{i + 1}_end": float(v) for i, v in enumerate(x.values[-1])})
    row.update({f"m{i}_end": float(v) for i, v in enumerate(mart.values[-1])})
    return text, mtext, row


def run_simulate_truncated(cfg):
    out = _pool_map(_truncated_task, [(cfg, r) for r in range(cfg.replications)], cfg.workers)
    paths = {}
    for r, (text, mtext, _) in enumerate(out):
        paths[f"rep{r:04d}"] = text
        paths[f"martingales{r:04d}"] = mtext
    return paths, [row for *_, row in out], {}


def _limit_task(args):
    cfg, r = args
    p = cfg.params
    spec = NoiseSpec(p.beta, p.seed, cfg.time_grid())
    x0 = cfg.scaled_initial(p.n)
    sol = simulate_limit_diffusion(x0, spec, p.k_max, replication=r, **cfg.solver_opts())
    row = {"replication": r, "iterations": sol.iterations,
           "u1_end": float(sol.u.values[-1, 0])}
    row.update({f"x{i + 1}_end": float(v) for i, v in enumerate(sol.x.values[-1])})
    return sol.to_csv(), row


def run_limit(cfg):
    out = _pool_map(_limit_task, [(cfg, r) for r in range(cfg.replications)], cfg.workers)
    paths = {f"limit{r:04d}": text for r, (text, _) in enumerate(out)}
    return paths, [row for _, row in out], {}


def run_compare(cfg):
    p = cfg.params
    if cfg.initial == "empty":
        raise ConfigError("initial", "the empty state has no n-independent scaling")
    x0 = [0.0] if cfg.initial == "all-busy" else cfg.initial["scaled"]
    table = weak_convergence_table(cfg.ns, p.beta, x0, cfg.times, k=p.k_max,
                                   replications=cfg.replications, seed=p.seed,
                                   dt=cfg.grid.dt, workers=cfg.workers)
    rows = [{"n": n, "t": t, "coordinate": c, "ks": ks} for n, t, c, ks in table]
    return {}, rows, {}


def _waits_task(args):
    cfg, r = args
    params = cfg.model()
    _, records = simulate_jsq_per_queue(params, cfg.initial_state(params.n).lengths(params.n),
                                        replication=r)
    return records.arrival_times, records.waits


def run_waits(cfg):
    params = cfg.model()
    out = _pool_map(_waits_task, [(cfg, r) for r in range(cfg.replications)], cfg.workers)
    per_rep = []
    for r, (arr, w) in enumerate(out):
        rec = WaitRecords(arr, w)
        per_rep.append({"replication": r, "arrivals": rec.total,
                        "delayed": int(np.count_nonzero(w > 0)),
                        "delayed_fraction": rec.delayed_fraction,
                        "scaled_delayed_fraction": rec.delayed_fraction * math.sqrt(params.n)})
    pooled = WaitRecords(np.concatenate([a for a, _ in out]), np.concatenate([w for _, w in out]))
    row = {"n": params.n, "arrivals": pooled.total, "delayed_fraction": pooled.delayed_fraction,
           "scaled_delayed_fraction": pooled.delayed_fraction * math.sqrt(params.n)}
    try:
        s = delayed_wait_distribution(pooled)
        row.update({"delayed": s.count, "mean_delayed_wait": s.mean, "sem_delayed_wait": s.sem,
                    "ks_exp1": s.ks_statistic, "ks_critical_01": s.ks_critical_01})
    except EmptySample:
        row.update({"delayed": 0, "mean_delayed_wait": None, "sem_delayed_wait": None,
                    "ks_exp1": None, "ks_critical_01": None})
    return {}, [row], {"replications.csv": per_rep}


def run_sweep(cfg):
    p = cfg.params
    x0 = cfg.initial if cfg.initial in PRESETS else cfg.initial["scaled"]
    if x0 == "all-busy":
        x0 = [0.0]
    elif x0 == "empty":
        x0 = lambda n, k=p.k_max: CountState.empty(k)  # noqa: E731
    if cfg.sweep == "hitting":
        table = estimate_hitting_probability(cfg.ns, p.beta, x0, p.horizon,
                                             replications=cfg.replications, seed=p.seed,
                                             k_max=p.k_max, workers=cfg.workers)
        rows = [{"n": h.n, "p_hat": h.p_hat, "ci_low": h.ci_low, "ci_high": h.ci_high,
                 "hits": h.hits, "replications": h.replications} for h in table]
    elif cfg.sweep == "waiting":
        rows = waiting_sweep(cfg.ns, p.beta, x0, p.horizon, replications=cfg.replications,
                             seed=p.seed, k_max=p.k_max, workers=cfg.workers)
    else:
        rows = []
        lim1, lim2 = cfg.tolerance("fluid_psi1"), cfg.tolerance("fluid_tail")
        for n in cfg.ns:
            params = cfg.model(n)
            init = cfg.initial_state(n) if cfg.initial in PRESETS else \
                CountState.from_scaled(x0, n, p.k_max)
            obs = observe_replications(params, init, [], cfg.replications, workers=cfg.workers)
            dev = [fluid_deviation(o, n) for o in obs]
            d1 = np.array([d[0] for d in dev])
            d2 = np.array([d[1].max() for d in dev])
            rows.append({"n": n, "max_psi1_dev": float(d1.max()),
                         "max_tail": float(d2.max()),
                         "frac_psi1_ok": float(np.mean(d1 <= lim1)),
                         "frac_tail_ok": float(np.mean(d2 <= lim2))})
    return {}, rows, {}


def run_figure1(cfg):
    paths, rows, extra = run_simulate(cfg)
    renamed = {"figure1" if stem == "rep0000" else f"figure1_{stem}": text
               for stem, text in paths.items()}
    return renamed, rows, extra


PIPELINES = {
    "simulate": run_simulate,
    "simulate-truncated": run_simulate_truncated,
    "limit": run_limit,
    "compare": run_compare,
    "waits": run_waits,
    "sweep": run_sweep,
    "figure1": run_figure1,
}


# --- output ------------------------------------------------------------------


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format_number(v)


def table_csv(rows):
    if not rows:
        return ""
    header = list(rows[0])
    lines = [",".join(header)]
    lines += [",".join(_cell(row.get(h)) for h in header) for row in rows]
    return "\n".join(lines) + "\n"


def _json_value(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


def table_jsonl(rows):
    return "".join(json.dumps({k: _json_value(v) for k, v in row.items()}) + "\n"
                   for row in rows)


def run_dir(cfg):
    if cfg.output:
        return Path(cfg.output)
    root = Path(os.environ.get(OUTPUT_ENV, "runs"))
    return root / f"{cfg.mode}-seed{cfg.params.seed}"


def metadata(cfg, wall):
    p = cfg.params
    ns = cfg.ns if cfg.mode in ("compare", "sweep") else [p.n]
    lam = [1.0 - p.beta / math.sqrt(n) for n in ns]
    single = len(ns) == 1 and cfg.mode not in ("compare", "sweep")
    return {
        "seed": p.seed,
        "n": ns[0] if single else ns,
        "beta": p.beta,
        "lambda_n": lam[0] if single else lam,
        "lambda_n_definition": "1 - beta/sqrt(n)",
        "k_max": p.k_max,
        "horizon": p.horizon,
        "dt": cfg.grid.dt,
        "replications": cfg.replications,
        "version": __version__,
        "mode": cfg.mode,
        "backend": BACKEND,
        "wall_time_s": wall,
    }


def run(cfg: ExperimentConfig) -> Path:
    """Execute ``cfg`` and write its artifacts; returns the run directory."""
    start = time.perf_counter()
    paths, rows, extra = PIPELINES[cfg.mode](cfg)
    wall = time.perf_counter() - start
    out = run_dir(cfg)
    (out / "paths").mkdir(parents=True, exist_ok=True)
    for stem, text in paths.items():
        (out / "paths" / f"{stem}.csv").write_text(text)
    (out / "summary.csv").write_text(table_csv(rows))
    (out / "summary.jsonl").write_text(table_jsonl(rows))
    for name, table in extra.items():
        (out / name).write_text(table_csv(table))
    # the run directory itself is not part of the experiment
    resolved = cfg.to_dict()
    resolved.pop("output")
    (out / "config.json").write_text(json.dumps(resolved, indent=2) + "\n")
    (out / "meta.json").write_text(json.dumps(metadata(cfg, wall), indent=2) + "\n")
    return out


def load_config(mode, config_path=None, overrides=(), output=None, workers=None):
    data = {}
    if config_path:
        try:
            with open(config_path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("--config", str(exc)) from None
    data["mode"] = mode
    for item in overrides:
        apply_override(data, item)
    if output is not None:
        data["output"] = output
    if workers is not None:
        data["workers"] = workers
    return ExperimentConfig.from_dict(data)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="jsqhw", description="JSQ many-server simulations and diffusion-limit experiments")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode in MODES:
        p = sub.add_parser(mode)
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="PATH=VALUE", help="override one field, e.g. params.n=400")
        p.add_argument("--output", help=f"run directory (default ${OUTPUT_ENV}/<mode>-seed<seed>)")
        p.add_argument("--workers", type=int, help="worker processes for replications")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.mode, args.config, args.overrides, args.output, args.workers)
        out = run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except JSQError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
