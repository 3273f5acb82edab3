"""Central finite differences used for gradients, Hessians and Jacobians."""
from __future__ import annotations

import numpy as np

GRAD_FLOOR, GRAD_REL = 1e-6, 1e-7
HESS_FLOOR, HESS_REL = 1e-4, 1e-5


def steps(v, floor, rel):
    return np.maximum(floor, rel * np.abs(np.asarray(v, dtype=float)))


def gradient(f, v, floor=GRAD_FLOOR, rel=GRAD_REL):
    v = np.asarray(v, dtype=float)
    h = steps(v, floor, rel)
    g = np.empty_like(v)
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = h[i]
        g[i] = (f(v + e) - f(v - e)) / (2.0 * h[i])
    return g


def jacobian(g, v, floor=GRAD_FLOOR, rel=GRAD_REL):
    """Rows index outputs of ``g``, columns index entries of ``v``."""
    v = np.asarray(v, dtype=float)
    h = steps(v, floor, rel)
    cols = []
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = h[i]
        cols.append((np.asarray(g(v + e), dtype=float) - np.asarray(g(v - e), dtype=float))
                    / (2.0 * h[i]))
    return np.column_stack(cols) if cols else np.zeros((np.size(g(v)), 0))


def hessian(f, v, floor=HESS_FLOOR, rel=HESS_REL):
    v = np.asarray(v, dtype=float)
    n = v.size
    h = steps(v, floor, rel)
    f0 = f(v)
    H = np.empty((n, n))
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h[i]
        H[i, i] = (f(v + ei) - 2.0 * f0 + f(v - ei)) / h[i] ** 2
        for j in range(i):
            ej = np.zeros(n)
            ej[j] = h[j]
            H[i, j] = H[j, i] = (
                f(v + ei + ej) - f(v + ei - ej) - f(v - ei + ej) + f(v - ei - ej)
            ) / (4.0 * h[i] * h[j])
    return H
