"""Central finite-difference oracles for derivative checks."""

from __future__ import annotations

from typing import Callable

import numpy as np

Array = np.ndarray


def central_jacobian(f: Callable[[Array], Array], x: Array, h: float = 1e-6) -> Array:
    """Central-difference Jacobian of f at x, shape (len(f(x)), len(x))."""
    x = np.asarray(x, dtype=float)
    y0 = np.atleast_1d(np.asarray(f(x), dtype=float))
    J = np.empty((y0.size, x.size))
    for j in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        J[:, j] = (np.asarray(f(xp)) - np.asarray(f(xm))) / (2.0 * h)
    return J


def central_gradient(f: Callable[[Array], float], x: Array, h: float = 1e-6) -> Array:
    """Central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.empty(x.size)
    for j in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        g[j] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def relative_error(approx: Array, exact: Array) -> float:
    """|| approx - exact || / (1 + || exact ||)."""
    approx = np.asarray(approx, dtype=float)
    exact = np.asarray(exact, dtype=float)
    return float(np.linalg.norm(approx - exact) / (1.0 + np.linalg.norm(exact)))
