"""Diffusion and fluid scaling of count paths, sampled on uniform grids."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import GridOutOfRange

# slack for grid points computed as t0 + j*dt landing an ulp past the horizon
_EDGE = 1e-9


class Grid(NamedTuple):
    t0: float
    dt: float
    count: int

    @classmethod
    def span(cls, horizon, dt, t0=0.0):
        """Grid from ``t0`` to ``horizon`` inclusive with step ``dt``."""
        return cls(float(t0), float(dt), int(round((horizon - t0) / dt)) + 1)

    def times(self):
        return self.t0 + self.dt * np.arange(self.count)

    @property
    def end(self):
        return self.t0 + self.dt * (self.count - 1)


@dataclass
class GridPath:
    t0: float
    dt: float
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if not self.dt > 0:
            raise ValueError("grid step must be positive")
        if self.values.shape[0] < 1:
            raise ValueError("a grid path needs at least one grid point")

    @property
    def grid(self):
        return Grid(self.t0, self.dt, self.values.shape[0])

    @property
    def times(self):
        return self.grid.times()

    @property
    def count(self):
        return self.values.shape[0]

    @property
    def k(self):
        return self.values.shape[1]

    def column(self, i):
        """Single-coordinate path holding column ``i`` (0-based)."""
        return GridPath(self.t0, self.dt, self.values[:, i:i + 1].copy())

    def to_csv(self, dest=None, columns: Sequence[str] | None = None):
        """Write ``t,x1,...,xk`` rows with 12 significant digits.

        Returns the text when ``dest`` is None.
        """
        if columns is None:
            columns = [f"x{i + 1}" for i in range(self.k)]
        text = format_csv(["t", *columns], np.column_stack([self.times, self.values]))
        if dest is None:
            return text
        with open(dest, "w", newline="") as fh:
            fh.write(text)
        return None

    @classmethod
    def from_csv(cls, src):
        with open(src) as fh:
            header = fh.readline().strip().split(",")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        t = data[:, 0]
        dt = float(t[1] - t[0]) if len(t) > 1 else 1.0
        return cls(float(t[0]), dt, data[:, 1:]), header[1:]


def format_number(v):
    """Positional decimal with 12 significant digits."""
    v = float(v)
    if v == 0:
        return "0"
    if not math.isfinite(v):
        return repr(v)
    return np.format_float_positional(v, precision=12, unique=False,
                                      fractional=False, trim="-")


def format_csv(header, rows):
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in np.asarray(rows, dtype=np.float64):
        buf.write(",".join(format_number(v) for v in row) + "\n")
    return buf.getvalue()


def _grid_times(path, grid):
    grid = Grid(*grid)
    if grid.count < 1 or not grid.dt > 0:
        raise GridOutOfRange("grid needs a positive step and at least one point")
    times = grid.times()
    slack = _EDGE * max(1.0, path.horizon)
    if times[0] < -slack or times[-1] > path.horizon + slack:
        raise GridOutOfRange(
            f"grid [{times[0]:.6g}, {times[-1]:.6g}] leaves path span [0, {path.horizon:.6g}]")
    return grid, np.clip(times, 0.0, path.horizon)


def scale_diffusion(path, n, grid) -> GridPath:
    """``X_1 = (Q_1 - n)/sqrt(n)``, ``X_i = Q_i/sqrt(n)``, right-continuous."""
    grid, times = _grid_times(path, grid)
    q = path.value_at(times).astype(np.float64)
    root = math.sqrt(n)
    x = q / root
    x[:, 0] = (q[:, 0] - n) / root
    return GridPath(grid.t0, grid.dt, x)


def scale_fluid(path, n, grid) -> GridPath:
    """``Psi_i = Q_i / n`` on the grid."""
    grid, times = _grid_times(path, grid)
    return GridPath(grid.t0, grid.dt, path.value_at(times) / float(n))


def unscale_diffusion(x: GridPath, n) -> np.ndarray:
    """Integer counts recovered from a diffusion-scaled grid path."""
    root = math.sqrt(n)
    q = x.values * root
    q[:, 0] += n
    return np.rint(q).astype(np.int64)
