"""Grid solver for the reflected integral system and its diffusion limit.

The system, for ``k >= 3`` coordinates, barrier ``B`` and driving paths ``y``::

    x1 = b1 + y1 + int(-x1 + x2) - u1,            x1 <= 0
    x2 = b2 + y2 + int(-x2 + x3) + u1 - u2,       0 <= x2 <= B
    xi = bi + yi + int(-xi + x{i+1}),  3 <= i < k,  xi >= 0
    xk = bk + yk + int(-xk)

with ``u1`` increasing only when ``x1 = 0`` and ``u2`` only when ``x2 = B``.

Coordinates ``k, k-1, ..., 3`` are autonomous and are solved first; their
``int x3`` feeds the two-dimensional reflected block.  That block is solved
through unreflected paths ``(w1, w2)`` with ``x1 = phi_0(w1)``,
``u1 = psi_0(w1)``, ``x2 = phi_B(w2)``, ``u2 = psi_B(w2)``, by Picard
iteration of the map

    T1(v) = b1 + y1 + int(-phi_0(v1) + phi_B(v2 + psi_0(v1)))
    T2(v) = b2 + y2 + int(-phi_B(v2 + psi_0(v1)))

on consecutive windows shorter than the contraction radius 1/5, where
``v = (w1, w2 - psi_0(w1))``.  Integrals are left-endpoint sums on the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import NonConvergence, PreconditionViolation
from .reflection import INFINITY, check_barrier
from .scaling import Grid, GridPath

WINDOW = 0.15
TOL = 1e-10
MAX_ITERS = 200


@dataclass
class DrivingInput:
    B: float
    b: np.ndarray
    y: GridPath

    def __post_init__(self):
        self.B = check_barrier(self.B)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.b.shape != (self.y.k,):
            raise PreconditionViolation(
                f"need one initial value per driving coordinate ({self.y.k}), got {self.b.shape}")
        if self.y.k < 2:
            raise PreconditionViolation("the system needs at least two coordinates")
        b = self.b
        if b[0] > 0 or b[1] < 0 or b[1] > self.B or np.any(b[2:] < 0):
            raise PreconditionViolation(
                f"initial values {b.tolist()} violate b1 <= 0, 0 <= b2 <= B, bi >= 0")


@dataclass
class LimitSolution:
    x: GridPath
    u: GridPath
    iterations: int = 0

    def to_csv(self, dest=None):
        k = self.x.k
        merged = GridPath(self.x.t0, self.x.dt, np.column_stack([self.x.values, self.u.values]))
        cols = [f"x{i + 1}" for i in range(k)] + ["u1", "u2"]
        return merged.to_csv(dest, columns=cols)


@dataclass(frozen=True)
class NoiseSpec:
    beta: float
    seed: int
    grid: Grid

    def __post_init__(self):
        object.__setattr__(self, "grid", Grid(*self.grid))
        if not self.grid.dt > 0:
            raise PreconditionViolation("noise grid step must be positive")


def _left_integral(f, dt, start=0.0):
    """``out[j] = start + dt * sum(f[:j])``."""
    out = np.empty(len(f))
    out[0] = 0.0
    np.cumsum(f[:-1], out=out[1:])
    out *= dt
    out += start
    return out


def _window_bounds(count, dt, window):
    step = max(1, int(math.floor(window / dt + 1e-9)))
    s = 0
    while s < count - 1:
        e = min(s + step, count - 1)
        yield s, e
        s = e


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NonConvergence(f"non-finite values in {what}")


def _solve_linear(b, forcing, dt, *, window, tol, max_iters, init="hold"):
    """Windowed Picard for ``x = b + forcing + int(-x)``."""
    m = len(forcing)
    x = np.empty(m)
    x[0] = b + forcing[0]
    acc = 0.0  # int_0^{t_s} -x
    iters = 0
    for s, e in _window_bounds(m, dt, window):
        cur = _initial_iterate(x[s], b + forcing[s:e + 1], init)
        scale = max(1.0, float(np.max(np.abs(cur))))
        for it in range(1, max_iters + 1):
            new = b + forcing[s:e + 1] + _left_integral(-cur, dt, acc)
            new[0] = x[s]
            diff = float(np.max(np.abs(new - cur)))
            cur = new
            if diff <= tol * scale:
                break
            scale = max(scale, float(np.max(np.abs(cur))))
        else:
            raise NonConvergence(f"linear Picard failed to reach tol={tol} in {max_iters} iterations")
        _check_finite(cur, "linear coordinate")
        iters = max(iters, it)
        x[s:e + 1] = cur
        acc += -float(np.sum(cur[:-1])) * dt
    return x, iters


def _initial_iterate(anchor, driver, init):
    if init == "zero":
        cur = np.zeros(len(driver))
    elif init == "driver":
        cur = driver.copy()
    else:
        cur = np.full(len(driver), anchor)
    cur[0] = anchor
    return cur


def _block_terms(v1, v2, B, c0, cB):
    """Reflections used by T on a window given carried regulator values."""
    psi0 = np.maximum.accumulate(np.maximum(v1, 0.0))
    np.maximum(psi0, c0, out=psi0)
    w2 = v2 + psi0
    if B == INFINITY:
        psiB = np.zeros_like(w2)
    else:
        psiB = np.maximum.accumulate(np.maximum(w2 - B, 0.0))
        np.maximum(psiB, cB, out=psiB)
    return psi0, w2, psiB


def _solve_block(b1, b2, y1, y2, B, dt, *, window, tol, max_iters, init="hold"):
    m = len(y1)
    v1 = np.empty(m)
    v2 = np.empty(m)
    v1[0] = b1 + y1[0]
    v2[0] = b2 + y2[0]
    acc1 = acc2 = 0.0
    c0 = cB = 0.0  # regulator values just before the window start
    iters = 0
    for s, e in _window_bounds(m, dt, window):
        d1 = b1 + y1[s:e + 1]
        d2 = b2 + y2[s:e + 1]
        cur1 = _initial_iterate(v1[s], d1, init)
        cur2 = _initial_iterate(v2[s], d2, init)
        scale = max(1.0, float(np.max(np.abs(cur1))), float(np.max(np.abs(cur2))))
        for it in range(1, max_iters + 1):
            psi0, w2, psiB = _block_terms(cur1, cur2, B, c0, cB)
            x1 = cur1 - psi0
            x2 = w2 - psiB
            new1 = d1 + _left_integral(-x1 + x2, dt, acc1)
            new2 = d2 + _left_integral(-x2, dt, acc2)
            new1[0], new2[0] = v1[s], v2[s]
            diff = max(float(np.max(np.abs(new1 - cur1))), float(np.max(np.abs(new2 - cur2))))
            cur1, cur2 = new1, new2
            if diff <= tol * scale:
                break
            scale = max(scale, float(np.max(np.abs(cur1))), float(np.max(np.abs(cur2))))
        else:
            raise NonConvergence(
                f"Picard iteration on window starting t={s * dt:.6g} did not reach "
                f"tol={tol} within {max_iters} iterations")
        _check_finite(cur1, "reflected block")
        _check_finite(cur2, "reflected block")
        iters = max(iters, it)
        psi0, w2, psiB = _block_terms(cur1, cur2, B, c0, cB)
        x1 = cur1 - psi0
        x2 = w2 - psiB
        acc1 += float(np.sum((-x1 + x2)[:-1])) * dt
        acc2 += float(np.sum(-x2[:-1])) * dt
        v1[s:e + 1] = cur1
        v2[s:e + 1] = cur2
        c0 = float(psi0[-1])
        cB = float(psiB[-1])
    return v1, v2, iters


def _assemble_block(v1, v2, B):
    psi0, w2, psiB = _block_terms(v1, v2, B, 0.0, 0.0)
    return v1 - psi0, w2 - psiB, psi0, psiB


def explicit_tail_solution(b, grid) -> GridPath:
    """Closed-form coordinates ``3..k`` of the limit when they carry no noise.

    ``b`` holds the initial values of coordinates 3..k.  Coordinate ``i`` is
    ``exp(-t) * sum_j t^j/j! * b[i+j]``.
    """
    b = np.asarray(b, dtype=np.float64)
    if np.any(b < 0):
        raise PreconditionViolation("tail initial values must be nonnegative")
    grid = Grid(*grid)
    t = grid.times()
    m = len(b)
    out = np.zeros((len(t), m))
    decay = np.exp(-t)
    for i in range(m):
        term = np.ones_like(t)
        acc = b[i] * term
        for j in range(1, m - i):
            term = term * t / j
            acc = acc + term * b[i + j]
        out[:, i] = decay * acc
    return GridPath(grid.t0, grid.dt, out)


def solve_limit_system(inp: DrivingInput, *, tol=TOL, window=WINDOW, max_iters=MAX_ITERS,
                       tail="auto", init="hold") -> LimitSolution:
    """Solve the coupled reflected system on the grid of ``inp.y``.

    ``tail="auto"`` uses the closed form for coordinates ``>= 3`` when their
    drivers vanish identically and Picard otherwise; ``tail="picard"`` always
    iterates.  ``init`` picks the first Picard iterate on each window
    (``"hold"``, ``"zero"`` or ``"driver"``).

    Raises:
        NonConvergence: a window failed to meet ``tol`` within ``max_iters``.
        PreconditionViolation: invalid initial values.
    """
    if not 0 < window < 0.2:
        raise PreconditionViolation("Picard window must lie in (0, 1/5)")
    y, b, B = inp.y, inp.b, inp.B
    dt = y.dt
    k = y.k
    m = y.count
    x = np.zeros((m, k))
    iters = 0
    if k >= 3:
        tail_y = y.values[:, 2:]
        if tail == "auto" and not np.any(tail_y):
            x[:, 2:] = explicit_tail_solution(b[2:], y.grid).values
        else:
            upper = np.zeros(m)
            for i in range(k - 1, 1, -1):
                forcing = y.values[:, i] + _left_integral(upper, dt)
                x[:, i], it = _solve_linear(b[i], forcing, dt, window=window, tol=tol,
                                            max_iters=max_iters, init=init)
                iters = max(iters, it)
                upper = x[:, i]
        y2 = y.values[:, 1] + _left_integral(x[:, 2], dt)
    else:
        y2 = y.values[:, 1].copy()
    v1, v2, it = _solve_block(b[0], b[1], y.values[:, 0], y2, B, dt, window=window,
                              tol=tol, max_iters=max_iters, init=init)
    iters = max(iters, it)
    x1, x2, u1, u2 = _assemble_block(v1, v2, B)
    x[:, 0] = x1
    x[:, 1] = x2
    return LimitSolution(GridPath(y.t0, dt, x), GridPath(y.t0, dt, np.column_stack([u1, u2])),
                         iterations=iters)


def residual(sol: LimitSolution, inp: DrivingInput, coords=None) -> float:
    """Sup-norm residual of the discretized integral equations.

    ``coords`` restricts the check to some coordinates (0-based).  A tail
    taken from the closed form satisfies the continuous equations, so its
    discrete residual is of order ``dt`` rather than ``tol``.
    """
    x, u = sol.x.values, sol.u.values
    y, b, dt = inp.y.values, inp.b, inp.y.dt
    k = x.shape[1]
    nxt = np.column_stack([x[:, 1:], np.zeros(len(x))])
    rhs = np.empty_like(x)
    for i in range(k):
        rhs[:, i] = b[i] + y[:, i] + _left_integral(-x[:, i] + nxt[:, i], dt)
    rhs[:, 0] -= u[:, 0]
    rhs[:, 1] += u[:, 0] - u[:, 1]
    err = np.abs(rhs - x)
    if coords is not None:
        err = err[:, list(coords)]
    return float(np.max(err))


def sample_brownian(spec: NoiseSpec, *, replication=0) -> GridPath:
    """Standard Brownian motion on the grid, started at 0."""
    g = spec.grid
    gen = rng.generator(spec.seed, replication, "noise")
    w = np.zeros(g.count)
    if g.count > 1:
        np.cumsum(gen.standard_normal(g.count - 1) * math.sqrt(g.dt), out=w[1:])
    return GridPath(g.t0, g.dt, w)


def make_limit_drivers(spec: NoiseSpec, k: int, *, replication=0) -> GridPath:
    """``y1 = sqrt(2) W(t) - beta t`` and ``yi = 0`` for ``i >= 2``."""
    if k < 3:
        raise PreconditionViolation("the limit system needs k >= 3")
    w = sample_brownian(spec, replication=replication)
    t = spec.grid.times() - spec.grid.t0
    y = np.zeros((spec.grid.count, k))
    y[:, 0] = math.sqrt(2.0) * w.values[:, 0] - spec.beta * t
    return GridPath(w.t0, w.dt, y)


def simulate_limit_diffusion(X0, spec: NoiseSpec, k: int, *, replication=0,
                             **solver_opts) -> LimitSolution:
    """One sample path of the diffusion limit (barrier ``B = inf``)."""
    X0 = np.zeros(k) if X0 is None else np.asarray(X0, dtype=np.float64)
    if len(X0) < k:
        X0 = np.concatenate([X0, np.zeros(k - len(X0))])
    y = make_limit_drivers(spec, k, replication=replication)
    return solve_limit_system(DrivingInput(INFINITY, X0[:k], y), **solver_opts)
