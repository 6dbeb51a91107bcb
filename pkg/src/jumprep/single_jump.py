"""Explicit martingale representation for a measure carrying a single jump.

For a payoff ``h(T, Z)`` with ``E[h] = 0`` the conditional expectation is
``h(T, Z)`` after the jump and ``-I_t / F_t`` before it, where
``I_t = int_{]0, t]} h dnu``. The representing integrand is

    g(t, z) = h(t, z) + I_t / F_t,

taken as ``h`` at the cutoff ``c`` when ``F_c = 0`` and as 0 beyond ``c``.
When ``F_t`` is small the ratio is evaluated from the right,
``I_t = -int_{]t, inf]} h dnu``, which keeps relative accuracy.
"""

from __future__ import annotations

import math
import warnings

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import (
    ImpossiblePathError,
    IntegrabilityError,
    ValidationError,
    check_positive_int,
    check_time_array,
)
from .measure_core import (
    ZERO_SURVIVAL,
    JumpLaw,
    JumpPath,
    MartingalePath,
    PathBatch,
    PredictableField,
    single_jump_compensator,
)

CENTER_TOL = 1e-10
ILL_CONDITIONED = 1e-8


class PayoffFunctional:
    """Payoff ``h(T, Z)`` of a single jump plus its value on the no-jump event.

    Parameters
    ----------
    func : callable
        ``func(t) -> (len(t), n_marks)`` payoff values for a jump at ``t``.
    n_marks : int
    value_at_infinity : float
        Payoff when no jump occurs in the window.
    breakpoints : iterable of float
        Times where ``func`` is discontinuous; used to align quadrature cells.
    """

    def __init__(self, func, n_marks, value_at_infinity=0.0, breakpoints=(), name=None,
                 offset=0.0, centered=False, initial_value=0.0):
        self.func = func
        self.n_marks = int(n_marks)
        self.value_at_infinity = float(value_at_infinity)
        self.breakpoints = tuple(float(b) for b in breakpoints)
        self.name = name
        self.offset = float(offset)
        self.centered = bool(centered)
        self.initial_value = float(initial_value)

    def __call__(self, t):
        t = check_time_array(t)
        vals = np.asarray(self.func(t), dtype=float)
        vals = np.broadcast_to(vals.reshape(len(t), -1) if vals.ndim else vals,
                               (len(t), self.n_marks))
        return vals - self.offset

    @property
    def at_infinity(self):
        return self.value_at_infinity - self.offset

    def shifted(self, c, centered=False, initial_value=None):
        """``h - c`` as a new payoff."""
        return PayoffFunctional(
            self.func, self.n_marks, self.value_at_infinity, self.breakpoints, self.name,
            self.offset + c, centered,
            self.initial_value if initial_value is None else initial_value,
        )

    @classmethod
    def constant(cls, value, n_marks):
        v = float(value)
        return cls(lambda t: np.full((len(t), n_marks), v), n_marks, v, name=f"const({v:g})")

    @classmethod
    def indicator_before(cls, time, n_marks, marks=None):
        """``1{T <= time, Z in marks}``; ``marks`` is a boolean mask or None for all."""
        time = float(time)
        mask = np.ones(n_marks) if marks is None else np.asarray(marks, dtype=float)

        def func(t):
            return (t <= time)[:, None] * mask[None, :]

        return cls(func, n_marks, 0.0, breakpoints=(time,), name=f"1{{T<={time:g}}}")

    @classmethod
    def from_table(cls, times, values, value_at_infinity=0.0):
        """Payoff defined at finitely many jump times (for atomic laws)."""
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float).reshape(len(times), -1)
        n_marks = values.shape[1]

        def func(t):
            idx = np.searchsorted(times, t)
            idx = np.clip(idx, 0, len(times) - 1)
            hit = np.isclose(times[idx], t, rtol=0, atol=1e-12)
            return np.where(hit[:, None], values[idx], 0.0)

        return cls(func, n_marks, value_at_infinity, name="table")


def _aligned(law, h):
    return law.with_breakpoints(h.breakpoints) if h.breakpoints else law


def _check_integrable(h, law):
    """Raise :class:`IntegrabilityError` naming the region where ``int |h| dnu`` fails."""
    absint = law.integral(lambda s: np.abs(h(s)))
    if math.isfinite(absint.total) and math.isfinite(h.at_infinity):
        if not law.has_density:
            return absint.total
        finer = law.with_grid(2 * law.grid_steps)
        fine = finer.integral(lambda s: np.abs(h(s))).total
        if abs(fine - absint.total) <= 0.1 * max(abs(fine), 1.0):
            return absint.total
        cells = np.diff(absint._fwd)
        fine_cells = np.diff(finer.integral(lambda s: np.abs(h(s)))._fwd)
        fine_cells = fine_cells[0::2] + fine_cells[1::2] if len(fine_cells) == 2 * len(cells) else None
        j = int(np.argmax(np.abs(fine_cells - cells))) if fine_cells is not None else 0
        raise IntegrabilityError(
            f"int |h| dnu does not settle under grid refinement ({absint.total:.6g} -> {fine:.6g}); "
            f"divergent region near [{law.edges[j]:.6g}, {law.edges[j + 1]:.6g}]"
        )
    if not math.isfinite(h.at_infinity):
        raise IntegrabilityError("payoff on the no-jump event is not finite")
    if law.has_density:
        cells = np.diff(absint._fwd)
        bad = np.nonzero(~np.isfinite(cells))[0]
        if len(bad):
            j = int(bad[0])
            raise IntegrabilityError(
                f"int |h| dnu diverges on [{law.edges[j]:.6g}, {law.edges[j + 1]:.6g}]"
            )
    raise IntegrabilityError("int |h| dnu diverges at an atom of the law")


def center_payoff(h, law):
    """Return ``h - E[h]`` with the centered flag set and ``initial_value = E[h]``."""
    law = _aligned(law, h)
    with np.errstate(all="ignore"):
        _check_integrable(h, law)
    mean = law.expectation(h, h.at_infinity)
    return h.shifted(mean, centered=True, initial_value=h.initial_value + mean)


def _centered(h, law):
    if h.centered:
        return h
    return center_payoff(h, law)


class ChouMeyerField(PredictableField):
    """Deterministic integrand ``g(t, z)`` of a centered single-jump payoff.

    Attributes
    ----------
    initial_value : float
        ``M_0 = E[h]`` of the uncentered payoff.
    cutoff : float
    min_survival : float
        Smallest ``F_t`` on the grid before the cutoff; small values mean the
        ratio ``I_t / F_t`` is evaluated in tail form.
    """

    def __init__(self, h, law):
        if not h.centered:
            raise ValidationError("payoff must be centered")
        if law.atoms_at([law.start])[0].sum() > 0:
            raise ValidationError("an atom at the start time is known at time 0; shift it to F_0")
        law = _aligned(law, h)
        self.h = h
        self.law = law
        self.initial_value = h.initial_value
        self.cutoff = law.cutoff
        self._I = law.integral(h)
        self._h_inf_mass = h.at_infinity * law.mass_at_infinity
        mean = self._I.total + self._h_inf_mass
        if abs(mean) > CENTER_TOL * max(1.0, abs(h.initial_value)):
            raise ValidationError(f"payoff is not centered: E[h] = {mean:.3g}")
        F = law.survival(law.edges)
        pos = F[(law.edges < min(self.cutoff, law.horizon)) & (F > ZERO_SURVIVAL)]
        self.min_survival = float(pos.min()) if len(pos) else 1.0
        if self.min_survival < ILL_CONDITIONED:
            warnings.warn(
                f"survival falls to {self.min_survival:.3g} before the cutoff; "
                "I_t / F_t is evaluated in tail form",
                RuntimeWarning,
                stacklevel=2,
            )
        super().__init__(self._evaluate, law.n_marks, name="chou_meyer")
        self._comp_int = None

    def integral_before(self, t, inclusive=True):
        """``int_{]start, t]} h dnu`` (open at ``t`` when ``inclusive`` is False)."""
        t = check_time_array(t)
        F = self.law.survival(t) if inclusive else self.law.survival_left(t)
        return self._mixed(t, F, inclusive)

    def _mixed(self, t, F, inclusive=True):
        fwd = self._I.upto(t, inclusive)
        if inclusive:
            tail = self._I.after(t)
        else:
            tail = self._I.after(t) + (self._I.upto(t, True) - self._I.upto(t, False))
        return np.where(F >= 0.5, fwd, -(tail + self._h_inf_mass))

    def _ratio(self, t, F, inclusive=True):
        I = self._mixed(t, F, inclusive)
        ok = F > ZERO_SURVIVAL
        out = np.zeros(len(t))
        out[ok] = I[ok] / F[ok]
        return out

    def _evaluate(self, t):
        law = self.law
        out = np.zeros((len(t), self.n_marks))
        inside = (t >= law.start) & (t <= min(self.cutoff, law.horizon))
        if inside.any():
            ti = t[inside]
            F = law.survival(ti)
            out[inside] = self.h(ti) + self._ratio(ti, F)[:, None]
        return out

    def no_jump_value(self, t, left=False):
        """Centered ``M_t`` on ``{T > t}`` (on ``{T >= t}`` when ``left``)."""
        t = check_time_array(t)
        F = self.law.survival_left(t) if left else self.law.survival(t)
        if np.any(F <= ZERO_SURVIVAL):
            bad = float(t[np.argmax(F <= ZERO_SURVIVAL)])
            raise ImpossiblePathError(
                f"no jump by t = {bad:g} has probability zero (cutoff {self.cutoff:g})"
            )
        return -self._ratio(t, F, inclusive=not left)

    def compensator_integral(self):
        """``u -> int_{]start, u]} sum_z g dnu / F_{s-}``, the compensator part before the jump."""
        if self._comp_int is None:
            law = self.law

            def func(s):
                Fl = law.survival_left(s)
                w = np.divide(1.0, Fl, out=np.zeros_like(Fl), where=Fl > ZERO_SURVIVAL)
                return self(s) * w[:, None]

            self._comp_int = law.integral(func)
        return self._comp_int


def chou_meyer_integrand(h, law):
    """Integrand ``g`` with ``E[h | F_t] = M_0 + (g * (mu - mu_p))_t``.

    Parameters
    ----------
    h : PayoffFunctional
        Centered internally when needed; ``M_0`` is kept in ``initial_value``.
    law : JumpLaw

    Returns
    -------
    ChouMeyerField
    """
    return ChouMeyerField(_centered(h, law), law)


def conditional_expectation_path(h, law, path, times=None):
    """``E[h(T, Z) | F_t]`` along a single-jump path.

    Values are for ``h`` as given, so a centered payoff yields a path started at 0.
    Raises :class:`ImpossiblePathError` on ``{T > t}`` when ``F_t = 0``.
    """
    if len(path) > 1:
        raise ValidationError("a single-jump path carries at most one event")
    shift = 0.0 if h.centered else None
    field = chou_meyer_integrand(h, law)
    if shift is None:
        shift = field.initial_value
    law = field.law
    T = path.first_time
    grid = np.linspace(law.start, law.horizon, 257) if times is None else check_time_array(times)
    extra = [law.atom_times[law.atom_times > law.start]]
    if math.isfinite(T):
        extra.append([T])
    knots = np.unique(np.concatenate([grid] + [np.asarray(e, float) for e in extra]))
    knots = knots[(knots >= law.start) & (knots <= law.horizon)]
    before = knots < T
    vals = np.empty(len(knots))
    vals[before] = field.no_jump_value(knots[before])
    jt = law.atom_times[(law.atom_times > law.start) & (law.atom_times < T)]
    sizes = list(field.no_jump_value(jt) - field.no_jump_value(jt, left=True)) if len(jt) else []
    jt = list(jt)
    if math.isfinite(T):
        hT = float(field.h([T])[0, path.marks[0]])
        vals[~before] = hT
        jt.append(T)
        sizes.append(hT - float(field.no_jump_value([T], left=True)[0]))
    return MartingalePath(knots, vals + shift, np.asarray(jt, float), np.asarray(sizes, float))


class BoundCheck(dict):
    """``{lhs, rhs, holds, slack}`` of the integrability bound."""

    @property
    def holds(self):
        return self["holds"]


def integrability_bound_check(h, law, t):
    """Check ``int_{]0,t]} |g| dnu <= (1 + 1/F_t) int_{]0,t]} |h| dnu``."""
    h = _centered(h, law)
    F = float(law.survival([t])[0])
    if F <= ZERO_SURVIVAL:
        raise ValidationError(f"F_t = 0 at t = {t:g}: the bound needs F_t > 0")
    g = ChouMeyerField(h, law)
    lhs = float(g.law.integral(lambda s: np.abs(g(s))).upto([t])[0])
    rhs = float((1.0 + 1.0 / F) * g.law.integral(lambda s: np.abs(h(s))).upto([t])[0])
    return BoundCheck(lhs=lhs, rhs=rhs, holds=bool(lhs <= rhs + 1e-10), slack=rhs - lhs)


def uniqueness_gap(g1, g2, law):
    """``E[((g1 - g2)^2 * <mu~>)_horizon]`` for the single-jump measure.

    Density part ``int D^2 dnu``; an atom ``a`` at ``s`` adds
    ``sum_z D_z^2 a_z - (sum_z D_z a_z)^2 / F_{s-}``.
    """
    def D(s):
        return g1(s) - g2(s)

    total = law.integral(lambda s: D(s) ** 2).total
    keep = law.atom_times > law.start
    if keep.any():
        at = law.atom_times[keep]
        a = law.atom_masses[keep]
        Fl = law.survival_left(at)
        ok = Fl > ZERO_SURVIVAL
        Da = np.einsum("am,am->a", D(at), a)
        total -= float(np.sum(Da[ok] ** 2 / Fl[ok]))
    return max(float(total), 0.0) if total > -1e-12 else float(total)


def _as_batch(paths, horizon):
    if isinstance(paths, PathBatch):
        return paths
    if isinstance(paths, JumpPath):
        return PathBatch.from_paths([paths], paths.horizon)
    return PathBatch.from_paths(list(paths), horizon)


class ChouMeyerRepresenter(TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``fit(law, payoff)`` builds ``g``; ``transform`` replays it.

    Parameters
    ----------
    grid_steps : int
        Quadrature cells for the law's cumulative integrals.
    quad_order : int
        Gauss-Legendre nodes per cell.

    Attributes
    ----------
    integrand_ : ChouMeyerField
    initial_value_ : float
    compensator_ : CompensatorSpec
    law_ : JumpLaw
    """

    def __init__(self, grid_steps=2048, quad_order=5):
        self.grid_steps = grid_steps
        self.quad_order = quad_order

    def fit(self, X, y=None):
        if not isinstance(X, JumpLaw):
            raise ValidationError("fit expects a JumpLaw")
        if not isinstance(y, PayoffFunctional):
            raise ValidationError("fit expects a PayoffFunctional as y")
        steps = check_positive_int(self.grid_steps, "grid_steps")
        order = check_positive_int(self.quad_order, "quad_order")
        law = X.with_grid(steps, order) if (steps, order) != (X.grid_steps, X.quad_order) else X
        self.integrand_ = chou_meyer_integrand(y, law)
        self.law_ = self.integrand_.law
        self.initial_value_ = self.integrand_.initial_value
        self.compensator_ = single_jump_compensator(self.law_)
        return self

    def transform(self, X, times=None):
        """``M_0 + (g * mu~)_t`` per path (rows) and time (columns)."""
        check_is_fitted(self, "integrand_")
        law = self.law_
        batch = _as_batch(X, law.horizon)
        if np.any(batch.counts > 1):
            raise ValidationError("single-jump paths carry at most one event")
        times = np.array([law.horizon]) if times is None else check_time_array(times)
        g = self.integrand_
        K = g.compensator_integral()
        T = batch.first_times
        Z = batch.first_marks
        jumped = np.isfinite(T)
        gT = np.zeros(len(batch))
        if jumped.any():
            gT[jumped] = g(T[jumped])[np.arange(jumped.sum()), Z[jumped]]
        out = np.empty((len(batch), len(times)))
        for j, t in enumerate(times):
            u = np.minimum(T, t)
            out[:, j] = self.initial_value_ + np.where(T <= t, gT, 0.0) - K.upto(u)
        return out

    def conditional_expectation(self, X, times=None):
        """Exact ``E[h | F_t]`` per path and time, for comparison with :meth:`transform`."""
        check_is_fitted(self, "integrand_")
        g = self.integrand_
        law = self.law_
        batch = _as_batch(X, law.horizon)
        times = np.array([law.horizon]) if times is None else check_time_array(times)
        T = batch.first_times
        Z = batch.first_marks
        jumped = np.isfinite(T)
        hT = np.zeros(len(batch))
        if jumped.any():
            hT[jumped] = g.h(T[jumped])[np.arange(jumped.sum()), Z[jumped]]
        F = law.survival(times)
        pre = np.where(F > ZERO_SURVIVAL, -g._ratio(times, F), np.nan)
        out = np.where(T[:, None] <= times[None, :], hT[:, None], pre[None, :])
        return out + self.initial_value_
