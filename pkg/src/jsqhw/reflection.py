"""One-sided Skorokhod reflection at an upper barrier.

For a barrier ``kappa`` the regulator is the running maximum
``psi(t) = sup_{s<=t} (x(s) - kappa)^+`` and the reflected path is
``phi = x - psi``.  ``kappa = INFINITY`` leaves the path untouched.
"""

import math

import numpy as np

from .errors import PreconditionViolation
from .scaling import GridPath

INFINITY = math.inf


def check_barrier(kappa):
    kappa = float(kappa)
    if math.isnan(kappa) or kappa < 0:
        raise PreconditionViolation(f"barrier must be in [0, inf], got {kappa}")
    return kappa


def regulator(x, kappa, carry=0.0):
    """Running-maximum regulator of a 1-D array.

    ``carry`` is the regulator value just before ``x[0]``, which lets a long
    path be processed window by window.
    """
    x = np.asarray(x, dtype=np.float64)
    if kappa == INFINITY:
        return np.zeros_like(x)
    psi = np.maximum.accumulate(np.maximum(x - kappa, 0.0))
    if carry > 0.0:
        np.maximum(psi, carry, out=psi)
    return psi


def reflect_upper(x: GridPath, kappa) -> tuple[GridPath, GridPath]:
    """Reflect a single-coordinate grid path below ``kappa``.

    Returns ``(phi, psi)`` with ``phi + psi = x``, ``phi <= kappa`` and ``psi``
    nondecreasing from 0, increasing only on steps where ``phi`` sits at
    ``kappa``.

    Raises:
        PreconditionViolation: if ``x`` starts above the barrier.
    """
    kappa = check_barrier(kappa)
    if x.k != 1:
        raise PreconditionViolation("reflect_upper takes a single-coordinate path")
    values = x.values[:, 0]
    if values[0] > kappa:
        raise PreconditionViolation(f"path starts at {values[0]:.6g}, above barrier {kappa:.6g}")
    psi = regulator(values, kappa)
    return GridPath(x.t0, x.dt, values - psi), GridPath(x.t0, x.dt, psi)


def reflect_lower(x: GridPath, level=0.0) -> tuple[GridPath, GridPath]:
    """Keep a path at or above ``level``: ``phi = x + psi >= level``.

    Thin wrapper over :func:`reflect_upper` applied to ``-x``.
    """
    neg = GridPath(x.t0, x.dt, -x.values)
    if level == -INFINITY:
        kappa = INFINITY
    else:
        kappa = -float(level)
    if kappa < 0:
        # shift so the barrier is nonnegative; reflection commutes with shifts
        phi, psi = reflect_upper(GridPath(x.t0, x.dt, neg.values - kappa), 0.0)
        return GridPath(x.t0, x.dt, -(phi.values + kappa)), psi
    phi, psi = reflect_upper(neg, kappa)
    return GridPath(x.t0, x.dt, -phi.values), psi
