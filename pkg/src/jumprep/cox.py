"""Recovering a Brownian path from a doubly stochastic jump measure.

Marks are ``1/n``; given a Brownian motion ``W`` the mark-``1/n`` events form
a Poisson process with intensity ``n exp(W_s)``. The normalized count
``est(n, h) = mu(]t, t+h] x {1/n}) / (n h)`` tends to ``exp(W_t)``, so ``W_t``
is a functional of the jump measure alone although the measure's own
compensator is not deterministic in it.

Inside the window ``]t, t + h]`` the Brownian path is sampled exactly on a
fine grid and interpolated linearly; the intensity is then sampled exactly
by thinning against the per-step majorant ``n exp(max(W_i, W_{i+1}))``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from ._validation import ValidationError, check_positive_int
from .harness.rng import map_blocks, stream
from .jump_calculus import _mean_se

WINDOW_STEPS = 200
MIN_EXPECTED_COUNT = 10.0


def _exp_linear_integral(a, b, dt):
    """``int_0^dt exp(a + (b - a) s / dt) ds`` computed stably."""
    d = b - a
    small = np.abs(d) < 1e-8
    safe = np.where(small, 1.0, d)
    full = np.exp(a) * np.expm1(d) / safe * dt
    return np.where(small, np.exp(a) * (1.0 + d / 2) * dt, full)


def window_integral(W, dt):
    """``int exp(W_s) ds`` over the window for piecewise-linear ``W`` rows."""
    return _exp_linear_integral(W[..., :-1], W[..., 1:], dt).sum(axis=-1)


def thinned_counts(rng, W, dt, n):
    """Event counts of a Cox process with intensity ``n exp(W_lin)`` per row of ``W``."""
    a, b = W[:, :-1], W[:, 1:]
    top = np.maximum(a, b)
    cand = rng.poisson(n * np.exp(top) * dt)
    rows = np.repeat(np.arange(W.shape[0]), cand.sum(axis=1))
    if rows.size == 0:
        return np.zeros(W.shape[0], dtype=np.int64)
    flat = cand.ravel()
    nz = np.flatnonzero(flat)
    cells = np.repeat(nz, flat[nz])
    ai, bi, ti = a.ravel()[cells], b.ravel()[cells], top.ravel()[cells]
    u = rng.random(cells.size)
    accept = rng.random(cells.size) < np.exp(ai + (bi - ai) * u - ti)
    return np.bincount(rows[accept], minlength=W.shape[0])


def _window_paths(rng, size, t, h, steps):
    """``W`` on ``t + h * [0, 1/steps, ..., 1]`` with exact Gaussian increments."""
    w0 = rng.normal(0.0, math.sqrt(t), size)
    dt = h / steps
    inc = rng.normal(0.0, math.sqrt(dt), (size, steps))
    W = np.empty((size, steps + 1))
    W[:, 0] = w0
    np.cumsum(inc, axis=1, out=W[:, 1:])
    W[:, 1:] += w0[:, None]
    return W, dt


def chebyshev_bound(t, n, h, eps):
    """``E[exp(W_t)] / (n h eps^2)`` with ``E[exp(W_t)] = exp(t / 2)``."""
    return math.exp(t / 2) / (n * h * eps**2)


def exact_mean_factor(h):
    """``h^-1 int_0^h exp(s / 2) ds``, the conditional-mean factor of the window."""
    return 2.0 * math.expm1(h / 2) / h


def squared_exponent_factor(h):
    """``h^-1 int_0^h exp(s^2 / 2) ds``, the factor with a squared exponent."""
    return integrate.quad(lambda s: math.exp(s * s / 2), 0.0, h)[0] / h


@dataclass
class CoxReport:
    """Per ``(n, h)`` cell statistics; ``rows()`` lists ``{n, h, statistic, value, std_error}``."""

    t: float
    eps: float
    num_paths: int
    cells: dict = field(default_factory=dict)

    def rows(self):
        out = []
        for (n, h), stats_ in sorted(self.cells.items()):
            for name, (value, se) in stats_.items():
                out.append({"n": n, "h": h, "statistic": name, "value": value, "std_error": se})
        return out

    def get(self, n, h, statistic):
        return self.cells[(n, h)][statistic]

    def bound_holds(self, n_se=3.0):
        """Empirical violation frequency below the Chebyshev bound in every cell."""
        return all(s["violation_rate"][0] <= s["chebyshev_bound"][0] + n_se * s["violation_rate"][1]
                   for s in self.cells.values())

    def mse_decreasing(self, h):
        ns = sorted(n for n, hh in self.cells if hh == h)
        mse = [self.cells[(n, h)]["mse"][0] for n in ns]
        return all(b < a for a, b in zip(mse, mse[1:]))


def cox_counterexample_experiment(n_list, h_list, t=1.0, num_paths=10_000, eps=0.5, seed=0,
                                  horizon=None, window_steps=WINDOW_STEPS, n_jobs=1):
    """Monte Carlo study of ``est(n, h)`` against ``exp(W_t)``.

    Parameters
    ----------
    n_list : sequence of float
        Mark indices, strictly increasing.
    h_list : sequence of float
        Window lengths.
    t, eps : float
        Window start and deviation threshold.
    horizon : float, optional
        Must cover ``t + max(h)``; defaults to that value.

    Returns
    -------
    CoxReport
        Per cell: ``violation_rate``, ``mse``, ``mean_error``, the Chebyshev
        bound with ``E[exp(W_t)]`` and its two variants scaled by the exact and
        the squared-exponent window factors, and ``expected_count``.

    Notes
    -----
    All ``n`` share the Brownian paths of a block, so the comparison across
    ``n`` uses common random numbers.
    """
    n_list = [float(n) for n in n_list]
    h_list = [float(h) for h in h_list]
    if not n_list or not h_list:
        raise ValidationError("n_list and h_list must be nonempty")
    if any(b <= a for a, b in zip(n_list, n_list[1:])) or n_list[0] <= 0:
        raise ValidationError("n_list must be positive and strictly increasing")
    if min(h_list) <= 0 or t < 0 or eps <= 0:
        raise ValidationError("h, eps must be positive and t nonnegative")
    horizon = t + max(h_list) if horizon is None else float(horizon)
    if t + max(h_list) > horizon + 1e-12:
        raise ValidationError(f"t + max(h) = {t + max(h_list)} exceeds the horizon {horizon}")
    num_paths = check_positive_int(num_paths, "num_paths")
    for n in n_list:
        for h in h_list:
            if n * h * math.exp(t / 2) < MIN_EXPECTED_COUNT:
                warnings.warn(f"n h = {n * h:g}: expected window count below {MIN_EXPECTED_COUNT:g}, "
                              "the estimator is unstable (see the reported standard errors)",
                              RuntimeWarning, stacklevel=2)

    def block(rng, size, b):
        out = {}
        for h in h_list:
            W, dt = _window_paths(rng, size, t, h, window_steps)
            target = np.exp(W[:, 0])
            for n in n_list:
                est = thinned_counts(rng, W, dt, n) / (n * h)
                out[(n, h)] = est - target
        return out

    parts = map_blocks(block, num_paths, seed, "cox", n_jobs)
    report = CoxReport(t=float(t), eps=float(eps), num_paths=num_paths)
    for n in n_list:
        for h in h_list:
            err = np.concatenate([p[(n, h)] for p in parts])
            bound = chebyshev_bound(t, n, h, eps)
            report.cells[(n, h)] = {
                "violation_rate": _mean_se(np.abs(err) >= eps),
                "chebyshev_bound": (bound, 0.0),
                "chebyshev_bound_exact_factor": (bound * exact_mean_factor(h), 0.0),
                "chebyshev_bound_squared_exponent_factor": (bound * squared_exponent_factor(h), 0.0),
                "mse": _mean_se(err**2),
                "mean_error": _mean_se(err),
                "expected_count": (n * h * math.exp(t / 2) * exact_mean_factor(h), 0.0),
            }
    return report


@dataclass
class ConditionalMeanCheck:
    """``E[est | W]`` estimate against its exact value for one frozen ``W``."""

    exact: float
    mean: float
    std_error: float

    def within(self, n_se=4.0):
        return abs(self.mean - self.exact) <= n_se * self.std_error + 1e-12


def conditional_mean_check(n, h, t=1.0, num_paths=20_000, seed=0, frozen=None,
                           window_steps=WINDOW_STEPS):
    """Freeze one Brownian window and compare the mean of ``est`` with ``h^-1 int exp(W)``.

    ``frozen="zero"`` uses ``W = 0``, where ``est`` is ``Poisson(n h) / (n h)``
    and the exact mean is 1.
    """
    num_paths = check_positive_int(num_paths, "num_paths")
    if frozen == "zero":
        W = np.zeros((1, window_steps + 1))
        dt = h / window_steps
    elif frozen is None:
        W, dt = _window_paths(stream(seed, "cox_frozen", 0), 1, t, h, window_steps)
    else:
        W = np.asarray(frozen, dtype=float).reshape(1, -1)
        dt = h / (W.shape[1] - 1)
    exact = 1.0 if frozen == "zero" else float(window_integral(W, dt)[0]) / h

    def block(rng, size, b):
        return thinned_counts(rng, np.repeat(W, size, axis=0), dt, n) / (n * h)

    est = np.concatenate(map_blocks(block, num_paths, seed, "cox_conditional"))
    mean, se = _mean_se(est)
    return ConditionalMeanCheck(exact=exact, mean=mean, std_error=se)
