"""Composite Gauss-Legendre rules on time grids."""

from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def gauss_legendre(order):
    x, w = np.polynomial.legendre.leggauss(order)
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


def interval_rule(a, b, order):
    """Nodes and weights for each interval ``[a_i, b_i]``; shapes ``(n, order)``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    x, w = gauss_legendre(order)
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    nodes = mid[..., None] + half[..., None] * x
    weights = half[..., None] * w
    return nodes, weights


def uniform_edges(start, stop, steps, breakpoints=()):
    edges = np.linspace(start, stop, steps + 1)
    extra = [b for b in breakpoints if start < b < stop]
    if extra:
        edges = np.unique(np.concatenate([edges, extra]))
    return edges
