"""Continuous martingales with deterministic clock, and joint product payoffs.

``Y`` is a continuous martingale with deterministic quadratic variation
``Gamma``: a Brownian motion run on the clock ``Gamma``. For a terminal payoff
``f(Y_T)`` the value ``u(t, y) = E[f(y + sigma G)]`` with
``sigma^2 = Gamma(T) - Gamma(t)`` gives the integrand ``H = du/dy``.

Products of a continuous-factor payoff and a jump-factor payoff are
represented with the product rule, and finite sums of products by linearity.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import CubicSpline
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import (
    UnsupportedPayoffError,
    ValidationError,
    check_positive_int,
    check_time_array,
)
from .harness.discrete import DiscreteModel
from .harness.rng import BLOCK_SIZE, map_blocks
from .jump_calculus import _mean_se
from .measure_core import NO_MARK, JumpPath, MarkSpace, PathBatch
from .multi_jump import (
    CompoundPoissonModel,
    MarkSumPayoff,
    frozen_integrals,
    grid_states,
    lattice_component,
    well_ordered_integrand,
)

HERMITE_NODES = 48
GL_ORDER = 12
TAIL_SD = 10.0
FD_STEP = 5e-3  # in units of sigma
TABLE_POINTS = 256
DENSE_POINTS = 161  # over +-10 sigma around each breakpoint
EVAL_CHUNK = 4096

_HX, _HW = hermegauss(HERMITE_NODES)
_HW = _HW / math.sqrt(2 * math.pi)
_GX, _GW = leggauss(GL_ORDER)
_FIXED_EDGES = np.linspace(-TAIL_SD, TAIL_SD, int(2 * TAIL_SD) + 1)


class DiffusionSpec:
    """Deterministic quadratic-variation clock ``Gamma`` on ``[0, horizon]``.

    Parameters
    ----------
    gamma : callable
        Vectorized, continuous, nondecreasing, ``gamma(0) = 0``.
    horizon : float
    grid_steps : int
        Default number of simulation steps.
    """

    def __init__(self, gamma, horizon=1.0, grid_steps=256):
        self._gamma = gamma
        self.horizon = float(horizon)
        if not self.horizon > 0:
            raise ValidationError("horizon must be positive")
        self.grid_steps = check_positive_int(grid_steps, "grid_steps")
        g = self.gamma(np.linspace(0.0, self.horizon, 4097))
        if not np.all(np.isfinite(g)):
            raise ValidationError("gamma must be finite on [0, horizon]")
        if abs(g[0]) > 1e-14:
            raise ValidationError("gamma(0) must be 0")
        if np.any(np.diff(g) < -1e-14):
            raise ValidationError("gamma must be nondecreasing")
        self.total = float(g[-1])

    def gamma(self, t):
        t = check_time_array(t)
        return np.broadcast_to(np.asarray(self._gamma(t), dtype=float), t.shape).copy()

    def remaining(self, t):
        """``Gamma(T) - Gamma(t)``, clipped at 0."""
        return np.clip(self.total - self.gamma(t), 0.0, None)

    @classmethod
    def brownian(cls, horizon=1.0, variance_rate=1.0, grid_steps=256):
        rate = float(variance_rate)
        if rate < 0:
            raise ValidationError("variance_rate must be nonnegative")
        return cls(lambda t: rate * np.asarray(t), horizon, grid_steps)

    @classmethod
    def piecewise(cls, epochs, rates, horizon=1.0, grid_steps=256):
        """Variance rate ``rates[i]`` on ``[epochs[i], epochs[i+1])``; ``epochs[0] = 0``."""
        e = np.asarray(epochs, dtype=float)
        r = np.asarray(rates, dtype=float)
        if len(e) != len(r) or len(e) == 0 or e[0] != 0 or np.any(np.diff(e) <= 0):
            raise ValidationError("epochs must start at 0, increase, and match rates")
        if np.any(r < 0):
            raise ValidationError("variance rates must be nonnegative")
        ends = np.append(e[1:], np.inf)

        def gamma(t):
            t = np.asarray(t, dtype=float)[..., None]
            return np.sum(r * np.clip(np.minimum(t, ends) - e, 0.0, None), axis=-1)

        return cls(gamma, horizon, grid_steps)


class TerminalPayoff:
    """Function ``f`` of ``Y_T``.

    Parameters
    ----------
    func : callable
        Vectorized.
    breakpoints : sequence of float
        Points where ``f`` or its derivative jumps; quadrature is split there.
    derivative : callable, optional
        ``f'``, used only at zero remaining variance.
    """

    def __init__(self, func, breakpoints=(), derivative=None, name=None):
        self.func = func
        self.breakpoints = tuple(float(b) for b in breakpoints)
        self.derivative = derivative
        self.name = name or "payoff"

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        return np.broadcast_to(np.asarray(self.func(y), dtype=float), y.shape)

    @property
    def smooth(self):
        return not self.breakpoints

    @classmethod
    def identity(cls):
        return cls(lambda y: y, derivative=np.ones_like, name="identity")

    @classmethod
    def square_minus(cls, c):
        c = float(c)
        return cls(lambda y: y * y - c, derivative=lambda y: 2 * y, name="square_minus")

    @classmethod
    def digital(cls, strike=0.0):
        """``1{y >= strike}``."""
        k = float(strike)
        return cls(lambda y: (y >= k).astype(float), breakpoints=(k,), name="digital")


def _gaussian_expectation(f, y, sigma, breakpoints=(), moment=0):
    """``E[f(y + sigma G) G^moment]`` per ``y`` for standard normal ``G`` and ``sigma > 0``."""
    y = np.asarray(y, dtype=float).ravel()
    out = np.empty(len(y))
    for a in range(0, len(y), EVAL_CHUNK):
        yc = y[a: a + EVAL_CHUNK]
        if not breakpoints:
            vals = f(yc[:, None] + sigma * _HX)
            out[a: a + EVAL_CHUNK] = vals @ (_HW * _HX**moment)
            continue
        b = np.clip((np.asarray(breakpoints)[None, :] - yc[:, None]) / sigma, -TAIL_SD, TAIL_SD)
        fixed = np.broadcast_to(_FIXED_EDGES, (len(yc), len(_FIXED_EDGES)))
        edges = np.sort(np.concatenate([fixed, b], axis=1), axis=1)
        half = (edges[:, 1:] - edges[:, :-1]) / 2
        mid = (edges[:, 1:] + edges[:, :-1]) / 2
        z = mid[..., None] + half[..., None] * _GX
        w = half[..., None] * _GW * np.exp(-z * z / 2) / math.sqrt(2 * math.pi) * z**moment
        vals = f(yc[:, None, None] + sigma * z)
        out[a: a + EVAL_CHUNK] = (vals * w).sum(axis=(1, 2))
    return out


class BrownianIntegrand:
    """``H(t, y) = du/dy`` for ``u(t, y) = E[f(y + sigma_t G)]``.

    ``u`` uses Gauss-Hermite quadrature for smooth payoffs and composite
    Gauss-Legendre split at the breakpoints otherwise. ``H`` is a fourth-order
    central difference with step ``5e-3 sigma_t``; :meth:`gradient` computes
    the same derivative as ``E[f(y + sigma G) G] / sigma``.
    """

    def __init__(self, payoff, spec, y0=0.0):
        if spec.total <= 0:
            raise ValidationError("Gamma(horizon) must be positive")
        self.payoff = payoff
        self.spec = spec
        self.y0 = float(y0)
        self._slices = {}
        self._warned = False
        self.initial_value = float(self.value(0.0, [self.y0])[0])

    def sigma(self, t):
        return float(np.sqrt(self.spec.remaining([float(t)])[0]))

    def value(self, t, y):
        """``u(t, y)`` for scalar ``t`` and array ``y``."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        s = self.sigma(t)
        if s == 0:
            return self.payoff(y).astype(float)
        return _gaussian_expectation(self.payoff, y, s, self.payoff.breakpoints).reshape(y.shape)

    def __call__(self, t, y):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        s = self.sigma(t)
        if s == 0:
            return self._terminal_slope(y)
        d = FD_STEP * s
        f = self.payoff

        def diff(shift):
            # u(y + shift) - u(y - shift) as one expectation: no cancellation in the tails
            bps = [b + e for b in f.breakpoints for e in (-shift, shift)]
            return _gaussian_expectation(lambda x: f(x + shift) - f(x - shift), y, s, bps).reshape(y.shape)

        return (8 * diff(d) - diff(2 * d)) / (12 * d)

    def gradient(self, t, y):
        """``E[f(y + sigma G) G] / sigma``: the derivative of the quadrature itself."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        s = self.sigma(t)
        if s == 0:
            return self._terminal_slope(y)
        return _gaussian_expectation(self.payoff, y, s, self.payoff.breakpoints, moment=1).reshape(y.shape) / s

    def _terminal_slope(self, y):
        # zero remaining variance: one-sided limit f'(y)
        if self.payoff.derivative is not None:
            return np.asarray(self.payoff.derivative(y), dtype=float)
        d = 1e-6 * np.maximum(1.0, np.abs(y))
        slope = (self.payoff(y + d) - self.payoff(y - d)) / (2 * d)
        if self.payoff.breakpoints:
            if not self._warned:
                warnings.warn("H at zero remaining variance is the one-sided slope of a "
                              "discontinuous payoff; set to 0 at its breakpoints", RuntimeWarning,
                              stacklevel=3)
                self._warned = True
            for b in self.payoff.breakpoints:
                slope = np.where(np.abs(y - b) <= 2 * d, 0.0, slope)
        return slope

    def gradient_check(self, times, ys, floor=1e-12):
        """Max relative gap between :meth:`__call__` and :meth:`gradient` over a grid."""
        worst = 0.0
        for t in np.atleast_1d(times):
            a = self(t, ys)
            b = self.gradient(t, ys)
            keep = np.abs(b) > floor
            if np.any(keep):
                worst = max(worst, float(np.max(np.abs(a[keep] - b[keep]) / np.abs(b[keep]))))
        return worst

    def slice(self, t):
        """Spline tables of ``u`` and ``H`` at time ``t`` (cached)."""
        key = float(t)
        sl = self._slices.get(key)
        if sl is None:
            sl = self._slices[key] = _Slice(self, key)
        return sl


class _Slice:
    """``u(t, .)`` and ``H(t, .)`` as cubic splines; direct evaluation outside the table."""

    def __init__(self, integrand, t):
        self.integrand = integrand
        self.t = t
        s = integrand.sigma(t)
        self.direct = s == 0
        if self.direct:
            return
        reach = 9.0 * math.sqrt(integrand.spec.total)
        bps = integrand.payoff.breakpoints
        lo = min([integrand.y0 - reach] + [b - TAIL_SD * s for b in bps])
        hi = max([integrand.y0 + reach] + [b + TAIL_SD * s for b in bps])
        base = np.linspace(lo, hi, TABLE_POINTS + 1)
        pts = [base]
        if s * 2 * TAIL_SD / (DENSE_POINTS - 1) < base[1] - base[0]:
            pts += [b + s * np.linspace(-TAIL_SD, TAIL_SD, DENSE_POINTS) for b in bps]
        y = np.unique(np.concatenate(pts))
        self.lo, self.hi = y[0], y[-1]
        self._u = CubicSpline(y, integrand.value(t, y))
        self._h = CubicSpline(y, integrand(t, y))

    def _eval(self, spline, direct, y):
        y = np.asarray(y, dtype=float)
        if self.direct:
            return direct(self.t, y.ravel()).reshape(y.shape)
        out = spline(y)
        bad = (y < self.lo) | (y > self.hi)
        if np.any(bad):
            out[bad] = direct(self.t, y[bad])
        return out

    def value(self, y):
        return self._eval(self._u, self.integrand.value, y)

    def beta(self, y):
        return self._eval(self._h, self.integrand, y)


def brownian_mrt_integrand(f, spec, y0=0.0):
    """Integrand of ``f(Y_T) = E[f] + int H_s dY_s`` as a :class:`BrownianIntegrand`."""
    if not isinstance(f, TerminalPayoff):
        f = TerminalPayoff(f)
    return BrownianIntegrand(f, spec, y0)


# -- factors of product payoffs --------------------------------------------


class ConstantFactor:
    """Degenerate factor ``alpha`` with zero integrand."""

    def __init__(self, alpha=1.0):
        self.initial_value = float(alpha)

    def value(self, t, y_or_path):
        return np.full(len(np.atleast_1d(t)), self.initial_value)

    left_value = value

    def beta(self, t, y_or_path, n_marks=1):
        return np.zeros(len(np.atleast_1d(t))) if n_marks is None else np.zeros((len(np.atleast_1d(t)), n_marks))

    def grid_values(self, times, data):
        return np.full((_rows(data), len(times)), self.initial_value)

    def terminal(self, data, model=None):
        return np.full(_rows(data), self.initial_value)


def _rows(data):
    return len(data) if isinstance(data, PathBatch) else np.asarray(data).shape[0]


class ContinuousFactor:
    """``f(Y_T)`` with ``alpha_c = u(0, y0)`` and ``beta_c = H``."""

    def __init__(self, payoff, spec, y0=0.0):
        self.payoff = payoff
        self.integrand = brownian_mrt_integrand(payoff, spec, y0)
        self.initial_value = self.integrand.initial_value

    def value(self, t, y):
        t, y = np.atleast_1d(t), np.atleast_1d(y)
        return np.array([self.integrand.value(s, [v])[0] for s, v in zip(t, y)])

    def beta(self, t, y, n_marks=None):
        t, y = np.atleast_1d(t), np.atleast_1d(y)
        return np.array([self.integrand(s, [v])[0] for s, v in zip(t, y)])

    def grid_values(self, times, Y):
        return np.column_stack([self.integrand.slice(t).value(Y[:, j]) for j, t in enumerate(times)])

    def grid_betas(self, times, Y):
        return np.column_stack([self.integrand.slice(t).beta(Y[:, j]) for j, t in enumerate(times)])

    def terminal(self, y, model=None):
        return self.payoff(y)


class JumpFactor:
    """Mark-sum payoff on a compound Poisson model with its lattice integrand ``beta_d``."""

    def __init__(self, payoff, model):
        self.payoff = payoff
        self.model = model
        self.field = well_ordered_integrand(payoff, model)
        self.initial_value = self.field.initial_value

    def left_value(self, t, path):
        """``Y^d_{t-}``: value from events strictly before ``t``."""
        t = check_time_array(t)
        return self.field.lattice.value(t, self.field.state(t, path))

    def value(self, t, path):
        return self.field.value(t, path)

    def beta(self, t, path, n_marks=None):
        return self.field(t, path)

    def grid_values(self, times, batch):
        """Value including events at or before each grid time, shape ``(paths, times)``."""
        k = grid_states(batch, self.field.jumps, times)
        lo, hi = int(k.min(initial=0)), int(k.max(initial=0))
        tab = self.field.lattice.table(times, lo, hi)
        return tab[np.arange(len(times))[None, :], k - lo]

    def terminal(self, batch, model=None):
        return self.payoff(batch, self.model)


@dataclass
class ProductTerm:
    coef: float
    cont: object
    disc: object


class WeakRepresentation:
    """``M_0 + int H dY + G * (mu - mu_p)`` for a sum of product terms.

    ``H(t) = sum_i c_i Y^{d,i}_{t-} beta_c^i(t)`` and
    ``G(t, z) = sum_i c_i Y^{c,i}_t beta_d^i(t, z)``.
    """

    def __init__(self, terms, n_marks=1):
        self.terms = list(terms)
        self.n_marks = int(n_marks)
        self.initial_value = float(sum(tm.coef * tm.cont.initial_value * tm.disc.initial_value
                                       for tm in self.terms))

    def H(self, t, y, path=None):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        y = np.broadcast_to(np.asarray(y, dtype=float), t.shape)
        path = JumpPath.empty(t.max(initial=1.0)) if path is None else path
        out = np.zeros(len(t))
        for tm in self.terms:
            if isinstance(tm.cont, ConstantFactor):
                continue
            out += tm.coef * tm.disc.left_value(t, path) * tm.cont.beta(t, y)
        return out

    def G(self, t, y, path=None):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        y = np.broadcast_to(np.asarray(y, dtype=float), t.shape)
        path = JumpPath.empty(t.max(initial=1.0)) if path is None else path
        out = np.zeros((len(t), self.n_marks))
        for tm in self.terms:
            if isinstance(tm.disc, ConstantFactor):
                continue
            out += tm.coef * tm.cont.value(t, y)[:, None] * tm.disc.beta(t, path)
        return out

    def __iter__(self):
        return iter((self.H, self.G))


def product_representation(cont, disc, coef=1.0, n_marks=None):
    """Product-rule integrands ``(H, G)`` of ``Y^c_T Y^d_T`` from the factor representations.

    Parameters
    ----------
    cont : ContinuousFactor or ConstantFactor
    disc : JumpFactor or ConstantFactor

    Returns
    -------
    WeakRepresentation
        Unpacks as ``H, G``.
    """
    if n_marks is None:
        n_marks = disc.model.n_marks if isinstance(disc, JumpFactor) else 1
    return WeakRepresentation([ProductTerm(float(coef), cont, disc)], n_marks)


# -- joint models and payoffs ----------------------------------------------


class JointModel:
    """Independent continuous martingale ``Y`` (clock ``spec``) and compound Poisson jumps."""

    def __init__(self, spec, jumps=None, y0=0.0):
        if jumps is not None and abs(jumps.horizon - spec.horizon) > 1e-12:
            raise ValidationError("continuous and jump parts need the same horizon")
        self.spec = spec
        self.jumps = jumps
        self.y0 = float(y0)

    @property
    def horizon(self):
        return self.spec.horizon

    @property
    def n_marks(self):
        return self.jumps.n_marks if self.jumps is not None else 1


class JointPayoff:
    """Finite sum ``sum_i c_i f_i(Y_T) g_i(X_T)``; a missing factor is the constant 1."""

    def __init__(self, terms):
        self.terms = []
        for coef, f, g in terms:
            if f is not None and not isinstance(f, TerminalPayoff):
                raise UnsupportedPayoffError("continuous factors must be TerminalPayoff instances")
            if g is not None and not isinstance(g, MarkSumPayoff):
                raise UnsupportedPayoffError("jump factors must be MarkSumPayoff instances")
            self.terms.append((float(coef), f, g))

    @classmethod
    def product(cls, cont=None, jump=None, coef=1.0):
        return cls([(coef, cont, jump)])

    def __add__(self, other):
        return JointPayoff(self.terms + other.terms)

    def __call__(self, y_T, batch, jumps):
        y_T = np.asarray(y_T, dtype=float)
        out = np.zeros(len(y_T))
        for coef, f, g in self.terms:
            a = f(y_T) if f is not None else 1.0
            b = g(batch, jumps) if g is not None else 1.0
            out += coef * a * b
        return out


def weak_representation(payoff, model):
    """``(H, G)`` with ``payoff = M_0 + int H dY + G * (mu - mu_p)``.

    Parameters
    ----------
    payoff : JointPayoff or callable on outcome tuples
        Callables are accepted for :class:`DiscreteJointModel` only.
    model : JointModel or DiscreteJointModel

    Raises
    ------
    UnsupportedPayoffError
        Payoff outside the product algebra on a model without an exact recursion.
    """
    if isinstance(model, DiscreteJointModel):
        return model.representation(payoff)
    if not isinstance(payoff, JointPayoff) or not isinstance(model, JointModel):
        raise UnsupportedPayoffError(
            "only finite sums of continuous x jump products are representable on continuous-time models"
        )
    terms = []
    for coef, f, g in payoff.terms:
        cont = ContinuousFactor(f, model.spec, model.y0) if f is not None else ConstantFactor()
        if g is not None:
            if model.jumps is None:
                raise UnsupportedPayoffError("a jump factor needs a jump model")
            disc = JumpFactor(g, model.jumps)
        else:
            disc = ConstantFactor()
        terms.append(ProductTerm(coef, cont, disc))
    return WeakRepresentation(terms, model.n_marks)


# -- simulation and replication --------------------------------------------


@dataclass
class JointPaths:
    """``Y`` on a uniform grid (``paths x (steps + 1)``) with the jump paths."""

    times: np.ndarray
    Y: np.ndarray
    batch: PathBatch

    def coarsen(self, factor):
        factor = check_positive_int(factor, "factor")
        if (len(self.times) - 1) % factor:
            raise ValidationError("factor must divide the number of steps")
        return JointPaths(self.times[::factor], self.Y[:, ::factor], self.batch)


def _empty_batch(n, horizon):
    return PathBatch(np.zeros(n + 1, np.int64), np.empty(0), np.empty(0, np.int64), horizon)


def _diffusion_block(rng, n, spec, times, y0):
    dg = np.diff(spec.gamma(times))
    Y = np.empty((n, len(times)))
    Y[:, 0] = y0
    np.cumsum(rng.normal(size=(n, len(times) - 1)) * np.sqrt(dg), axis=1, out=Y[:, 1:])
    Y[:, 1:] += y0
    return Y


def simulate_joint(model, num_paths, seed, n_steps=None, n_jobs=1):
    """Exact Gaussian increments of ``Y`` on a uniform grid plus independent jump paths."""
    num_paths = check_positive_int(num_paths, "num_paths")
    n_steps = model.spec.grid_steps if n_steps is None else check_positive_int(n_steps, "n_steps")
    times = model.horizon * np.arange(n_steps + 1) / n_steps
    parts = map_blocks(lambda rng, n, b: _diffusion_block(rng, n, model.spec, times, model.y0),
                       num_paths, seed, "diffusion", n_jobs)
    batch = (model.jumps.simulate(num_paths, seed, n_jobs) if model.jumps is not None
             else _empty_batch(num_paths, model.horizon))
    return JointPaths(times, np.concatenate(parts), batch)


def replicate(rep, payoff, model, paths):
    """Per path: payoff, ``int H dY`` (left-point sums) and ``G * (mu - mu_p)`` (frozen cells).

    Returns
    -------
    target, cont_integral, jump_integral : ndarray
    """
    times, Y, batch = paths.times, paths.Y, paths.batch
    K = len(times) - 1
    dY = np.diff(Y, axis=1)
    cont_int = np.zeros(len(Y))
    jump_int = np.zeros(len(Y))
    left = times[:-1]
    for tm in rep.terms:
        uc = tm.cont.grid_values(left, Y[:, :-1])
        if not isinstance(tm.cont, ConstantFactor):
            ud = tm.disc.grid_values(left, batch)
            cont_int += tm.coef * np.sum(ud * tm.cont.grid_betas(left, Y[:, :-1]) * dY, axis=1)
        if isinstance(tm.disc, JumpFactor):
            comp = lattice_component(tm.disc.field, model.n_marks)
            x, _ = frozen_integrals([comp], batch, model.jumps.rates, n_cells=K,
                                    multiplier=lambda lo, hi, u=uc, c=tm.coef: c * u[lo:hi])
            jump_int += x
    target = payoff(Y[:, -1], batch, model.jumps)
    return target, cont_int, jump_int


@dataclass
class HedgeReport:
    """Replication statistics; ``rows()`` lists ``{quantity, value, std_error}``."""

    initial_value: float
    num_paths: int
    steps: tuple
    stats: dict = field(default_factory=dict)

    def rows(self):
        return [{"quantity": k, "value": v, "std_error": se} for k, (v, se) in self.stats.items()]

    def mse(self, steps):
        return self.stats[f"replication_mse_steps_{steps}"][0]

    def mse_ratios(self):
        """``MSE(finer) / MSE(coarser)`` for consecutive grids."""
        return [self.mse(b) / self.mse(a) for a, b in zip(self.steps, self.steps[1:])]


def replication_study(payoff, model, num_paths=100_000, seed=0, steps=(16, 64, 256), n_jobs=1):
    """Monte Carlo replication of a joint payoff on nested uniform grids.

    All grids share the finest Brownian increments, so refinements are
    compared on common paths.
    """
    num_paths = check_positive_int(num_paths, "num_paths")
    steps = tuple(sorted(check_positive_int(s, "steps") for s in steps))
    fine = steps[-1]
    if any(fine % s for s in steps):
        raise ValidationError("every grid must divide the finest grid")
    rep = weak_representation(payoff, model)
    batch = (model.jumps.simulate(num_paths, seed, n_jobs) if model.jumps is not None
             else _empty_batch(num_paths, model.horizon))
    times = model.horizon * np.arange(fine + 1) / fine
    # tables are shared by all blocks; build them before any parallel work
    for tm in rep.terms:
        if isinstance(tm.cont, ContinuousFactor):
            for s in steps:
                for t in times[:-1:fine // s]:
                    tm.cont.integrand.slice(t)

    def block(rng, n, b):
        lo = b * BLOCK_SIZE
        full = JointPaths(times, _diffusion_block(rng, n, model.spec, times, model.y0),
                          batch.block(lo, lo + n))
        out = {}
        for s in steps:
            target, ci, ji = replicate(rep, payoff, model, full.coarsen(fine // s))
            out[s] = (target, ci, ji)
        return out

    parts = map_blocks(block, num_paths, seed, "diffusion", n_jobs)
    report = HedgeReport(rep.initial_value, num_paths, steps)
    st = report.stats
    st["initial_value"] = (rep.initial_value, 0.0)
    target = np.concatenate([p[fine][0] for p in parts])
    st["payoff_mean"] = _mean_se(target)
    for s in steps:
        ci = np.concatenate([p[s][1] for p in parts])
        ji = np.concatenate([p[s][2] for p in parts])
        err = target - (rep.initial_value + ci + ji)
        st[f"replication_error_steps_{s}"] = _mean_se(err)
        st[f"replication_mse_steps_{s}"] = _mean_se(err**2)
        if s == fine:
            st["cross_covariance"] = _mean_se(ci * ji)
    st["cap_hit_fraction"] = (batch.cap_hits / num_paths, 0.0)
    return report


# -- discrete joint model ---------------------------------------------------


class DiscreteJointModel:
    """Alternating Bernoulli slots: a diffusion move ``+-s_k`` then a possible unit jump.

    Slot ``2k`` moves ``Y`` up or down by ``s_k`` with probability 1/2 each
    (marks ``up``/``down``); slot ``2k + 1`` jumps (mark ``jump``) with
    probability ``p_k``. Outcome tuples follow :class:`DiscreteModel`.
    """

    UP, DOWN, JUMP = 0, 1, 2

    def __init__(self, n_pairs, step_sizes=None, jump_probs=0.1, horizon=1.0):
        self.n_pairs = check_positive_int(n_pairs, "n_pairs")
        self.horizon = float(horizon)
        if step_sizes is None:
            step_sizes = math.sqrt(self.horizon / self.n_pairs)
        self.steps = np.broadcast_to(np.asarray(step_sizes, dtype=float), (self.n_pairs,)).copy()
        self.jump_probs = np.broadcast_to(np.asarray(jump_probs, dtype=float), (self.n_pairs,)).copy()
        if np.any(self.jump_probs < 0) or np.any(self.jump_probs > 1):
            raise ValidationError("jump probabilities must lie in [0, 1]")
        probs = np.zeros((2 * self.n_pairs, 3))
        probs[0::2, :2] = 0.5
        probs[1::2, 2] = self.jump_probs
        self.marks = MarkSpace(("up", "down", "jump"), (1.0, -1.0, 1.0))
        self.model = DiscreteModel(self.marks, 2 * self.n_pairs, probs, self.horizon)

    def terminal(self, outcomes):
        """``(Y_T, N_T)`` of an outcome tuple."""
        y = sum(self.steps[k // 2] * (1.0 if o == self.UP else -1.0)
                for k, o in enumerate(outcomes) if k % 2 == 0)
        n = sum(1 for k, o in enumerate(outcomes) if k % 2 == 1 and o == self.JUMP)
        return y, n

    def choices(self, k):
        return (self.UP, self.DOWN) if k % 2 == 0 else (self.JUMP, NO_MARK)

    def prob(self, k, o):
        if k % 2 == 0:
            return 0.5
        p = self.jump_probs[k // 2]
        return p if o == self.JUMP else 1.0 - p

    def increment(self, k, o):
        """``dY`` on diffusion slots, ``dN - p`` on jump slots."""
        if k % 2 == 0:
            return self.steps[k // 2] * (1.0 if o == self.UP else -1.0)
        return (1.0 if o == self.JUMP else 0.0) - self.jump_probs[k // 2]

    def leaves(self):
        def rec(prefix):
            k = len(prefix)
            if k == 2 * self.n_pairs:
                yield prefix
                return
            for o in self.choices(k):
                yield from rec(prefix + (o,))

        yield from rec(())

    def values(self, payoff):
        """Conditional expectations of ``payoff(outcomes)`` at every reachable node."""
        vals = {}

        def rec(prefix):
            k = len(prefix)
            if k == 2 * self.n_pairs:
                v = float(payoff(prefix))
            else:
                v = sum(self.prob(k, o) * rec(prefix + (o,)) for o in self.choices(k))
            vals[prefix] = v
            return v

        rec(())
        return vals

    def representation(self, payoff):
        """Exact ``(H, G)`` for an arbitrary payoff on outcome tuples."""
        vals = self.values(payoff)
        H, G = {}, {}
        for prefix in vals:
            k = len(prefix)
            if k == 2 * self.n_pairs:
                continue
            if k % 2 == 0:
                H[prefix] = (vals[prefix + (self.UP,)] - vals[prefix + (self.DOWN,)]) / (2 * self.steps[k // 2])
            else:
                G[prefix] = vals[prefix + (self.JUMP,)] - vals[prefix + (NO_MARK,)]
        return DiscreteJointRepresentation(self, vals[()], H, G)

    def product_representation(self, cont, jump):
        """``(H, G)`` of ``cont(Y_T) jump(N_T)`` from the two factor recursions alone."""
        n = self.n_pairs
        yc, yd = {}, {}

        def cont_value(moves):
            m = len(moves)
            if moves not in yc:
                if m == n:
                    y = sum(s * (1.0 if o == self.UP else -1.0) for s, o in zip(self.steps, moves))
                    yc[moves] = float(cont(y))
                else:
                    yc[moves] = 0.5 * (cont_value(moves + (self.UP,)) + cont_value(moves + (self.DOWN,)))
            return yc[moves]

        def jump_value(events):
            m = len(events)
            if events not in yd:
                if m == n:
                    yd[events] = float(jump(sum(1 for o in events if o == self.JUMP)))
                else:
                    p = self.jump_probs[m]
                    yd[events] = p * jump_value(events + (self.JUMP,)) + (1 - p) * jump_value(events + (NO_MARK,))
            return yd[events]

        H, G = {}, {}
        for leaf in self.leaves():
            for k in range(2 * n):
                prefix = leaf[:k]
                moves, events = prefix[0::2], prefix[1::2]
                if k % 2 == 0 and prefix not in H:
                    beta_c = (cont_value(moves + (self.UP,)) - cont_value(moves + (self.DOWN,))) / (2 * self.steps[k // 2])
                    H[prefix] = jump_value(events) * beta_c
                elif k % 2 == 1 and prefix not in G:
                    beta_d = jump_value(events + (self.JUMP,)) - jump_value(events + (NO_MARK,))
                    G[prefix] = cont_value(moves) * beta_d
        return DiscreteJointRepresentation(self, cont_value(()) * jump_value(()), H, G)


@dataclass
class DiscreteJointRepresentation:
    """Exact integrands on a :class:`DiscreteJointModel`, keyed by outcome prefix."""

    model: DiscreteJointModel
    initial_value: float
    H: dict
    G: dict

    def replicated(self, outcomes):
        """``M_0 + sum H dY + sum G (dN - p)`` after each slot of ``outcomes``."""
        out = [self.initial_value]
        for k, o in enumerate(outcomes):
            prefix = tuple(outcomes[:k])
            coef = self.H[prefix] if k % 2 == 0 else self.G[prefix]
            out.append(out[-1] + coef * self.model.increment(k, o))
        return np.array(out)

    def max_error(self, payoff):
        """Max over all nodes of ``|E[payoff | node] - replicated value|``."""
        vals = self.model.values(payoff)
        worst = 0.0
        for leaf in self.model.leaves():
            rep = self.replicated(leaf)
            for k in range(len(leaf) + 1):
                worst = max(worst, abs(rep[k] - vals[leaf[:k]]))
        return worst


class BrownianRepresenter(TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``fit(spec, payoff)`` then ``transform(Y)`` gives ``E[f] + int H dY``.

    Parameters
    ----------
    y0 : float
        Starting value of ``Y``.
    """

    def __init__(self, y0=0.0):
        self.y0 = y0

    def fit(self, X, y=None):
        if not isinstance(X, DiffusionSpec):
            raise ValidationError("fit expects a DiffusionSpec")
        if y is None:
            raise ValidationError("fit needs the terminal payoff as y")
        self.integrand_ = brownian_mrt_integrand(y, X, self.y0)
        self.initial_value_ = self.integrand_.initial_value
        self.spec_ = X
        return self

    def transform(self, X, times=None):
        """Left-point integral along each row of ``X`` (``Y`` on a uniform grid)."""
        check_is_fitted(self, "integrand_")
        Y = np.atleast_2d(np.asarray(X, dtype=float))
        K = Y.shape[1] - 1
        times = self.spec_.horizon * np.arange(K + 1) / K if times is None else np.asarray(times, float)
        betas = np.column_stack([self.integrand_.slice(t).beta(Y[:, j]) for j, t in enumerate(times[:-1])])
        return self.initial_value_ + np.sum(betas * np.diff(Y, axis=1), axis=1)
