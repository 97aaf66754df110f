"""Finite-difference derivatives used to verify the analytic ones."""

from __future__ import annotations

import numpy as np


def _steps(x, rel):
    return rel * np.maximum(1.0, np.abs(x))


def _central(f, x, h):
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h[j]
        g[j] = (f(x + e) - f(x - e)) / (2 * h[j])
    return g


def _richardson(table):
    """Eliminate successive even-order error terms from a halving-step table."""
    for m in range(1, len(table)):
        factor = 4.0**m
        table = [(factor * table[i + 1] - table[i]) / (factor - 1) for i in range(len(table) - 1)]
    return table[0]


def fd_gradient(f, x, rel_step: float = 1e-3, levels: int = 2) -> np.ndarray:
    """Central-difference gradient with steps ``rel_step * max(1, |x_j|)``.

    ``levels > 1`` halves the step repeatedly and applies Richardson
    extrapolation; ``levels=1`` is the plain central difference.
    """
    x = np.asarray(x, dtype=float)
    h = _steps(x, rel_step)
    return _richardson([_central(f, x, h / 2**i) for i in range(levels)])


def _second_difference(f, x, f0, h):
    n = x.size
    H = np.empty((n, n))
    for j in range(n):
        ej = np.zeros(n)
        ej[j] = h[j]
        H[j, j] = (f(x + ej) - 2 * f0 + f(x - ej)) / h[j] ** 2
        for k in range(j):
            ek = np.zeros(n)
            ek[k] = h[k]
            H[j, k] = H[k, j] = (f(x + ej + ek) - f(x + ej - ek) - f(x - ej + ek)
                                 + f(x - ej - ek)) / (4 * h[j] * h[k])
    return H


def fd_hessian(f, x, rel_step: float = 3e-2, levels: int = 3) -> np.ndarray:
    """Second-difference Hessian refined by Richardson extrapolation.

    Each level halves the step; the O(h^2) error term is eliminated between
    successive levels.
    """
    x = np.asarray(x, dtype=float)
    f0 = f(x)
    h = _steps(x, rel_step)
    return _richardson([_second_difference(f, x, f0, h / 2**i) for i in range(levels)])


def fd_jacobian(g, x, rel_step: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian of a vector function (columns = inputs)."""
    x = np.asarray(x, dtype=float)
    h = _steps(x, rel_step)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h[j]
        cols.append((np.asarray(g(x + e)) - np.asarray(g(x - e))) / (2 * h[j]))
    J = np.column_stack(cols)
    return 0.5 * (J + J.T) if J.shape[0] == J.shape[1] else J


def relative_error(approx, exact) -> np.ndarray:
    approx, exact = np.asarray(approx), np.asarray(exact)
    return np.abs(approx - exact) / np.abs(exact)
