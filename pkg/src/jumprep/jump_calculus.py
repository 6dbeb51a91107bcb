"""Pathwise integrals against ``mu - mu_p`` and the two quadratic variations.

Atoms of the optional and predictable quadratic variation are stored as
mark-by-mark matrices. Several marks may carry compensator mass at the same
instant, and the identities ``[W * mu~] = W^2 * [mu~]`` and
``<W * mu~> = W^2 * <mu~>`` only hold when the square is taken as the
quadratic form ``W^T A W`` of such an atom. On a set ``B`` the matrices
reduce to ``(mu({s} x B) - mu_p({s} x B))^2`` and
``mu_p({s} x B) - mu_p({s} x B)^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._quadrature import interval_rule
from ._validation import IntegrabilityError, ValidationError, check_positive_int
from .measure_core import (MASS_TOL, ZERO_SURVIVAL, DeterministicCompensator, MartingalePath, PathBatch,
                           SingleJumpCompensator)

DEFAULT_GRID = 256
DEFAULT_ORDER = 5


def _knots(path, comp, grid_steps):
    grid = np.linspace(comp.start, comp.horizon, (grid_steps or 1) + 1)
    atimes, _ = comp.atoms(path)
    extra = [path.times, atimes, comp.breakpoints(path)]
    pts = np.concatenate([grid] + [np.asarray(e, float) for e in extra])
    pts = pts[(pts >= comp.start) & (pts <= comp.horizon)]
    return np.unique(pts)


def _density_increments(func, path, comp, knots, quad_order):
    """``int_{knot_i}^{knot_i+1} sum_z func(s, z) lambda(s, z) ds`` per knot interval.

    Knots include every event time, so the strict past is constant inside
    each interval.
    """
    if not comp.has_density or len(knots) < 2:
        return np.zeros(max(len(knots) - 1, 0))
    nodes, w = interval_rule(knots[:-1], knots[1:], quad_order)
    flat = nodes.ravel()
    vals = (func(flat) * comp.density(flat, path)).sum(axis=1).reshape(nodes.shape)
    return (w * vals).sum(axis=1)


def _atom_lookup(times, atimes):
    """Index into ``atimes`` for each of ``times`` or -1."""
    idx = np.searchsorted(atimes, times)
    ok = idx < len(atimes)
    ok[ok] &= atimes[idx[ok]] == times[ok]
    return np.where(ok, idx, -1)


def stochastic_integral(W, path, comp, grid_steps=DEFAULT_GRID, quad_order=DEFAULT_ORDER):
    """Pathwise ``(W * (mu - mu_p))_t`` as a :class:`MartingalePath` started at 0.

    Event and compensator-atom contributions are exact; the hazard part is
    integrated with Gauss-Legendre rules on the grid refined at every event,
    atom and compensator breakpoint.
    """
    knots = _knots(path, comp, grid_steps)
    atimes, amasses = comp.atoms(path)
    atimes = np.asarray(atimes, float)

    dens = _density_increments(lambda s: W(s, path), path, comp, knots, quad_order)
    comp_cum = np.concatenate([[0.0], np.cumsum(dens)])

    # jump of the integral at each event / atom time
    jt = np.unique(np.concatenate([path.times, atimes]))
    sizes = np.zeros(len(jt))
    if len(jt):
        Wj = W(jt, path)
        aidx = _atom_lookup(jt, atimes)
        has_atom = aidx >= 0
        if has_atom.any():
            sizes[has_atom] -= np.einsum("nm,nm->n", Wj[has_atom], amasses[aidx[has_atom]])
        eidx = _atom_lookup(jt, path.times)
        has_ev = eidx >= 0
        if has_ev.any():
            marks = path.marks[eidx[has_ev]]
            if np.any(marks < 0) or np.any(marks >= W.n_marks):
                raise ValidationError("field undefined at an event mark")
            sizes[has_ev] += Wj[has_ev, marks]
    if not np.all(np.isfinite(sizes)):
        raise ValidationError("field is not finite at an event or atom")
    k = np.searchsorted(jt, knots, side="right")
    jump_cum = np.concatenate([[0.0], np.cumsum(sizes)])[k]
    values = jump_cum - comp_cum
    return MartingalePath(knots, values, jt, sizes)


@dataclass(frozen=True)
class QVMeasure:
    """Optional or predictable quadratic variation of ``mu - mu_p`` along one path."""

    kind: str
    atom_times: np.ndarray
    atom_matrices: np.ndarray
    path: object = None
    compensator: object = None
    grid_steps: int = DEFAULT_GRID
    quad_order: int = DEFAULT_ORDER

    @property
    def n_marks(self):
        return self.atom_matrices.shape[1]

    def _density_part(self, func, times):
        if self.kind != "predictable" or self.compensator is None or not self.compensator.has_density:
            return np.zeros(len(times))
        knots = _knots(self.path, self.compensator, self.grid_steps)
        knots = np.unique(np.concatenate([knots, times]))
        inc = _density_increments(func, self.path, self.compensator, knots, self.quad_order)
        cum = np.concatenate([[0.0], np.cumsum(inc)])
        return cum[np.searchsorted(knots, times)]

    def measure(self, t, marks=None):
        """``QV([start, t] x B)`` with ``marks`` a boolean mask (None = all)."""
        times = np.atleast_1d(np.asarray(t, dtype=float))
        ones = np.ones(self.n_marks) if marks is None else np.asarray(marks, dtype=float)
        per_atom = np.einsum("m,amn,n->a", ones, self.atom_matrices, ones)
        cum = np.concatenate([[0.0], np.cumsum(per_atom)])
        atom_part = cum[np.searchsorted(self.atom_times, times, side="right")]
        dens = self._density_part(lambda s: np.broadcast_to(ones, (len(s), self.n_marks)), times)
        out = atom_part + dens
        return float(out[0]) if np.ndim(t) == 0 else out

    def integrate(self, W, t):
        """``(W^2 * QV)_t`` where atoms act through the quadratic form ``W^T A W``."""
        times = np.atleast_1d(np.asarray(t, dtype=float))
        if len(self.atom_times):
            Wa = W(self.atom_times, self.path)
            per_atom = np.einsum("am,amn,an->a", Wa, self.atom_matrices, Wa)
        else:
            per_atom = np.zeros(0)
        cum = np.concatenate([[0.0], np.cumsum(per_atom)])
        atom_part = cum[np.searchsorted(self.atom_times, times, side="right")]
        dens = self._density_part(lambda s: W(s, self.path) ** 2, times)
        out = atom_part + dens
        return float(out[0]) if np.ndim(t) == 0 else out


def _check_atoms(amasses):
    if np.any(amasses < -MASS_TOL) or np.any(amasses.sum(axis=1) > 1 + MASS_TOL):
        raise ValidationError("compensator atom masses must lie in [0, 1] and sum to at most 1")


def optional_qv(path, comp, grid_steps=DEFAULT_GRID):
    """``[mu~]``: one rank-one atom ``(delta - m)(delta - m)^T`` per event or compensator atom."""
    atimes, amasses = comp.atoms(path)
    atimes = np.asarray(atimes, float)
    _check_atoms(amasses)
    M = comp.n_marks
    times = np.unique(np.concatenate([path.times, atimes]))
    vecs = np.zeros((len(times), M))
    aidx = _atom_lookup(times, atimes)
    vecs[aidx >= 0] -= amasses[aidx[aidx >= 0]]
    eidx = _atom_lookup(times, path.times)
    rows = np.nonzero(eidx >= 0)[0]
    vecs[rows, path.marks[eidx[rows]]] += 1.0
    mats = np.einsum("am,an->amn", vecs, vecs)
    return QVMeasure("optional", times, mats, path, comp, grid_steps)


def predictable_qv(comp, path, grid_steps=DEFAULT_GRID, quad_order=DEFAULT_ORDER):
    """``<mu~>``: hazard density unchanged, each atom ``m`` becomes ``diag(m) - m m^T``."""
    atimes, amasses = comp.atoms(path)
    atimes = np.asarray(atimes, float)
    _check_atoms(amasses)
    mats = np.einsum("am,mn->amn", amasses, np.eye(comp.n_marks)) - np.einsum(
        "am,an->amn", amasses, amasses
    )
    return QVMeasure("predictable", atimes, mats, path, comp, grid_steps, quad_order)


@dataclass(frozen=True)
class PushforwardReport:
    times: np.ndarray
    optional_gap: float
    predictable_gap: float

    @property
    def max_gap(self):
        return max(self.optional_gap, self.predictable_gap)


def _bracket_of_integral(X, times):
    sq = np.concatenate([[0.0], np.cumsum(X.jump_sizes**2)])
    return sq[np.searchsorted(X.jump_times, times, side="right")]


def _angle_of_integral(W, path, comp, times, grid_steps, quad_order):
    """Compensator of ``sum (Delta X)^2`` by conditioning on each atom's outcome."""
    atimes, amasses = comp.atoms(path)
    atimes = np.asarray(atimes, float)
    per_atom = np.zeros(len(atimes))
    if len(atimes):
        Wa = W(atimes, path)
        mean = np.einsum("am,am->a", Wa, amasses)
        jump_var = np.einsum("am,am->a", amasses, (Wa - mean[:, None]) ** 2)
        per_atom = jump_var + (1.0 - amasses.sum(axis=1)) * mean**2
    cum = np.concatenate([[0.0], np.cumsum(per_atom)])
    atom_part = cum[np.searchsorted(atimes, times, side="right")]
    knots = np.unique(np.concatenate([_knots(path, comp, grid_steps), times]))
    inc = _density_increments(lambda s: W(s, path) ** 2, path, comp, knots, quad_order)
    dens = np.concatenate([[0.0], np.cumsum(inc)])[np.searchsorted(knots, times)]
    return atom_part + dens


def qv_pushforward_check(W, path, comp, grid_steps=DEFAULT_GRID, quad_order=DEFAULT_ORDER):
    """Largest gap in ``[W*mu~] = W^2*[mu~]`` and ``<W*mu~> = W^2*<mu~>`` over the grid."""
    X = stochastic_integral(W, path, comp, grid_steps, quad_order)
    times = X.times
    lhs_opt = _bracket_of_integral(X, times)
    rhs_opt = optional_qv(path, comp, grid_steps).integrate(W, times)
    lhs_pred = _angle_of_integral(W, path, comp, times, grid_steps, quad_order)
    rhs_pred = predictable_qv(comp, path, grid_steps, quad_order).integrate(W, times)
    return PushforwardReport(
        times,
        float(np.max(np.abs(lhs_opt - rhs_opt), initial=0.0)),
        float(np.max(np.abs(lhs_pred - rhs_pred), initial=0.0)),
    )


@dataclass(frozen=True)
class IsometryEstimate:
    lhs: float
    rhs: float
    lhs_se: float
    rhs_se: float
    diff_se: float
    num_paths: int
    exact: bool = False

    @property
    def diff(self):
        return self.lhs - self.rhs

    def within(self, n_se=3.0, atol=0.0):
        return abs(self.diff) <= n_se * self.diff_se + atol

    def rows(self):
        return [{"quantity": "lhs", "value": self.lhs, "std_error": self.lhs_se},
                {"quantity": "rhs", "value": self.rhs, "std_error": self.rhs_se}]


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    if len(x) < 2:
        return float(x.mean()) if len(x) else 0.0, 0.0
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x)))


def _check_blowup(samples):
    if not np.all(np.isfinite(samples)):
        raise IntegrabilityError("non-finite squared integral: the integrand is not square integrable")
    total = samples.sum()
    if len(samples) >= 100 and total > 0 and samples.max() > 0.5 * total:
        raise IntegrabilityError(
            "one path carries more than half of the second moment; the running mean is not settling"
        )


def _single_jump_terminal(W, batch, comp):
    """Vectorized terminal values for a deterministic ``W`` and one jump per path.

    The compensator is ``nu / F_-`` stopped at ``T``, so both integrals are
    running integrals against the law read at ``min(T, horizon)``.
    """
    law = comp.law

    def against_hazard(power):
        def func(s):
            Fl = law.survival_left(s)
            w = np.divide(1.0, Fl, out=np.zeros_like(Fl), where=Fl > ZERO_SURVIVAL)
            return W(s) ** power * w[:, None]

        return law.integral(func)

    T, Z = batch.first_times, batch.first_marks
    stop = np.minimum(T, comp.horizon)
    jump = np.zeros(len(batch))
    hit = np.isfinite(T)
    if hit.any():
        jump[hit] = W(T[hit])[np.arange(hit.sum()), Z[hit]]
    q = against_hazard(2).upto(stop)
    atimes, hazards = comp.atom_hazards()
    if len(atimes):
        # an atom of the compensator removes (sum_z W a_z)^2 from <mu~>
        corr = np.einsum("am,am->a", W(atimes), hazards) ** 2
        cum = np.concatenate([[0.0], np.cumsum(corr)])
        q -= cum[np.searchsorted(atimes, stop, side="right")]
    return jump - against_hazard(1).upto(stop), q


def terminal_values(W, batch, comp, grid_steps=DEFAULT_GRID, quad_order=DEFAULT_ORDER):
    """``(W*mu~)_T`` and ``(W^2*<mu~>)_T`` for every path of a batch."""
    n = len(batch)
    if not W.history_dependent and isinstance(comp, DeterministicCompensator) and not len(comp.atoms()[0]):
        knots = np.linspace(comp.start, comp.horizon, grid_steps + 1)
        knots = np.unique(np.concatenate([knots, comp.breakpoints()]))
        c1 = _density_increments(lambda s: W(s), None, comp, knots, quad_order).sum()
        c2 = _density_increments(lambda s: W(s) ** 2, None, comp, knots, quad_order).sum()
        vals = np.zeros(len(batch.times))
        if len(batch.times):
            vals = W(batch.times)[np.arange(len(batch.times)), batch.marks]
        jump = np.zeros(n)
        np.add.at(jump, batch.path_index, vals)
        return jump - c1, np.full(n, c2)
    if not W.history_dependent and isinstance(comp, SingleJumpCompensator):
        return _single_jump_terminal(W, batch, comp)
    x = np.empty(n)
    q = np.empty(n)
    for i in range(n):
        path = batch[i]
        X = stochastic_integral(W, path, comp, grid_steps, quad_order)
        x[i] = X.terminal
        q[i] = predictable_qv(comp, path, grid_steps, quad_order).integrate(W, comp.horizon)
    return x, q


def isometry_estimate(W, scenario, num_paths=10_000, seed=0, grid_steps=DEFAULT_GRID,
                      exact=False, n_jobs=1):
    """Compare ``E[(W*mu~)_T^2]`` with ``E[(W^2*<mu~>)_T]``.

    ``scenario`` must provide ``compensator()`` and ``simulate(num_paths, seed)``;
    with ``exact=True`` it must provide ``enumerate_paths()`` yielding
    ``(probability, path)`` and the expectation is computed over every path.
    """
    comp = scenario.compensator()
    if exact:
        lhs = rhs = 0.0
        count = 0
        for prob, path in scenario.enumerate_paths():
            X = stochastic_integral(W, path, comp, grid_steps)
            lhs += prob * X.terminal**2
            rhs += prob * predictable_qv(comp, path, grid_steps).integrate(W, comp.horizon)
            count += 1
        return IsometryEstimate(lhs, rhs, 0.0, 0.0, 0.0, count, exact=True)
    num_paths = check_positive_int(num_paths, "num_paths", minimum=100)
    batch = scenario.simulate(num_paths, seed, n_jobs=n_jobs)
    x, q = terminal_values(W, batch, comp, grid_steps)
    sq = x**2
    _check_blowup(sq)
    lhs, lhs_se = _mean_se(sq)
    rhs, rhs_se = _mean_se(q)
    _, diff_se = _mean_se(sq - q)
    return IsometryEstimate(lhs, rhs, lhs_se, rhs_se, diff_se, num_paths)
