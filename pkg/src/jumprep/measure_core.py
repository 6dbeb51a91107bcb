"""Laws, paths, compensators and fields for integer-valued random measures.

Time runs over ``[start, horizon]``. A law of a single jump ``(T, Z)`` keeps
any probability of ``T > horizon`` in ``mass_at_infinity`` ("no jump seen").
Marks live in a finite :class:`MarkSpace`; events refer to marks by index and
the sentinel index :data:`NO_MARK` stands for "no jump".
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from ._quadrature import interval_rule, uniform_edges
from ._validation import ValidationError, check_positive_int, check_time_array

NO_MARK = -1
MASS_TOL = 1e-12
ZERO_SURVIVAL = 0.0


@dataclass(frozen=True)
class MarkSpace:
    """Finite ordered set of mark labels with attached real values."""

    labels: tuple
    values: tuple
    sentinel: str = "none"

    def __post_init__(self):
        labels = tuple(str(lab) for lab in self.labels)
        values = tuple(float(v) for v in self.values)
        if not labels:
            raise ValidationError("mark space must be nonempty")
        if len(labels) != len(values):
            raise ValidationError("labels and values differ in length")
        if len(set(labels)) != len(labels):
            raise ValidationError("mark labels must be distinct")
        if self.sentinel in labels:
            raise ValidationError(f"sentinel {self.sentinel!r} collides with a mark label")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_values(cls, values, labels=None):
        values = [float(v) for v in values]
        if labels is None:
            labels = [f"m{i}" for i in range(len(values))]
        return cls(tuple(labels), tuple(values))

    def __len__(self):
        return len(self.labels)

    @property
    def value_array(self):
        return np.asarray(self.values, dtype=float)

    def index(self, mark):
        """Index of a mark given by label or index; the sentinel maps to NO_MARK."""
        if isinstance(mark, (int, np.integer)) and not isinstance(mark, bool):
            if mark == NO_MARK:
                return NO_MARK
            if 0 <= mark < len(self.labels):
                return int(mark)
            raise ValidationError(f"mark index {mark} out of range")
        if mark == self.sentinel:
            return NO_MARK
        try:
            return self.labels.index(str(mark))
        except ValueError:
            raise ValidationError(f"unknown mark label {mark!r}") from None

    def subset(self, marks=None):
        """Boolean mask over marks and whether the no-jump outcome is included.

        ``None`` means every outcome, including "no jump".
        """
        if marks is None:
            return np.ones(len(self), dtype=bool), True
        if isinstance(marks, (str, int, np.integer)):
            marks = [marks]
        mask = np.zeros(len(self), dtype=bool)
        include_none = False
        for m in marks:
            i = self.index(m)
            if i == NO_MARK:
                include_none = True
            else:
                mask[i] = True
        return mask, include_none


class JumpEvent(NamedTuple):
    time: float
    mark: int


class JumpPath:
    """One realization of an integer-valued random measure on ``[start, horizon]``."""

    __slots__ = ("times", "marks", "horizon", "start")

    def __init__(self, times, marks, horizon, start=0.0):
        times = np.array(times, dtype=float).reshape(-1)
        marks = np.array(marks, dtype=np.int64).reshape(-1)
        if times.shape != marks.shape:
            raise ValidationError("times and marks differ in length")
        times.flags.writeable = False
        marks.flags.writeable = False
        self.times = times
        self.marks = marks
        self.horizon = float(horizon)
        self.start = float(start)

    @classmethod
    def from_events(cls, events, horizon, marks=None, start=0.0):
        times, idx = [], []
        for ev in events:
            t, m = ev
            times.append(float(t))
            idx.append(marks.index(m) if marks is not None else int(m))
        return cls(times, idx, horizon, start)

    @classmethod
    def empty(cls, horizon, start=0.0):
        return cls([], [], horizon, start)

    def __len__(self):
        return len(self.times)

    def __repr__(self):
        evs = ", ".join(f"({t:.6g}, {m})" for t, m in zip(self.times, self.marks))
        return f"JumpPath([{evs}], horizon={self.horizon:g})"

    def __eq__(self, other):
        if not isinstance(other, JumpPath):
            return NotImplemented
        return (
            self.horizon == other.horizon
            and self.start == other.start
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.marks, other.marks)
        )

    __hash__ = None

    @property
    def events(self):
        return tuple(JumpEvent(float(t), int(m)) for t, m in zip(self.times, self.marks))

    @property
    def first_time(self):
        return float(self.times[0]) if len(self.times) else math.inf

    def n_before(self, t):
        """Number of events strictly before each ``t`` (the predictable history size)."""
        return np.searchsorted(self.times, t, side="left")

    def count(self, t, marks=None):
        """``mu([start, t] x B)``; ``marks`` is a boolean mask or None for all."""
        t = check_time_array(t)
        k = np.searchsorted(self.times, t, side="right")
        if marks is None:
            return k
        hit = np.concatenate([[0], np.cumsum(np.asarray(marks)[self.marks])])
        return hit[k]

    def truncated(self, t):
        """Events strictly before ``t``."""
        k = int(np.searchsorted(self.times, t, side="left"))
        return JumpPath(self.times[:k], self.marks[:k], self.horizon, self.start)


class PathBatch(Sequence):
    """Many jump paths stored as flat event arrays with CSR offsets."""

    def __init__(self, offsets, times, marks, horizon, start=0.0, cap_hits=0):
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.times = np.asarray(times, dtype=float)
        self.marks = np.asarray(marks, dtype=np.int64)
        self.horizon = float(horizon)
        self.start = float(start)
        self.cap_hits = int(cap_hits)

    @classmethod
    def from_paths(cls, paths, horizon=None):
        paths = list(paths)
        if horizon is None:
            horizon = paths[0].horizon if paths else 1.0
        counts = [len(p) for p in paths]
        offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        times = np.concatenate([p.times for p in paths]) if paths else np.empty(0)
        marks = np.concatenate([p.marks for p in paths]) if paths else np.empty(0, np.int64)
        start = paths[0].start if paths else 0.0
        return cls(offsets, times, marks, horizon, start)

    @classmethod
    def concat(cls, batches):
        batches = list(batches)
        shift = 0
        offsets = [np.zeros(1, dtype=np.int64)]
        for b in batches:
            offsets.append(b.offsets[1:] + shift)
            shift += b.offsets[-1]
        return cls(
            np.concatenate(offsets),
            np.concatenate([b.times for b in batches]),
            np.concatenate([b.marks for b in batches]),
            batches[0].horizon,
            batches[0].start,
            sum(b.cap_hits for b in batches),
        )

    def __len__(self):
        return len(self.offsets) - 1

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        if i < 0:
            i += len(self)
        a, b = self.offsets[i], self.offsets[i + 1]
        return JumpPath(self.times[a:b], self.marks[a:b], self.horizon, self.start)

    def block(self, lo, hi):
        """Paths ``lo <= i < hi`` as a batch."""
        a, b = self.offsets[lo], self.offsets[hi]
        return PathBatch(self.offsets[lo:hi + 1] - a, self.times[a:b], self.marks[a:b],
                         self.horizon, self.start)

    @property
    def counts(self):
        return np.diff(self.offsets)

    @property
    def path_index(self):
        return np.repeat(np.arange(len(self)), self.counts)

    @property
    def first_times(self):
        first = np.full(len(self), math.inf)
        has = self.counts > 0
        first[has] = self.times[self.offsets[:-1][has]]
        return first

    @property
    def first_marks(self):
        first = np.full(len(self), NO_MARK, dtype=np.int64)
        has = self.counts > 0
        first[has] = self.marks[self.offsets[:-1][has]]
        return first


@dataclass(frozen=True)
class PathCheck:
    ok: bool
    kind: str | None = None
    index: int | None = None
    detail: str = ""

    def __bool__(self):
        return self.ok


def validate_path(path, n_marks=None):
    """Check the integer-valued measure conditions on a path.

    Returns a :class:`PathCheck`; the first violation found is reported.
    """
    times, marks = path.times, path.marks
    for i, (t, m) in enumerate(zip(times, marks)):
        if math.isnan(t):
            return PathCheck(False, "nan_time", i, "event time is NaN")
        if math.isinf(t):
            return PathCheck(False, "infinite_time", i, "a no-jump event cannot sit in a path")
        if t < path.start:
            return PathCheck(False, "negative_time", i, f"time {t} before start {path.start}")
        if t > path.horizon:
            return PathCheck(False, "beyond_horizon", i, f"time {t} after horizon {path.horizon}")
        if m == NO_MARK or m < 0 or (n_marks is not None and m >= n_marks):
            return PathCheck(False, "bad_mark", i, f"mark {m} is not a real mark")
        if i > 0:
            if t == times[i - 1]:
                return PathCheck(False, "duplicate_time", i, f"two events at time {t}")
            if t < times[i - 1]:
                return PathCheck(False, "unordered", i, f"time {t} precedes {times[i - 1]}")
    return PathCheck(True)


class JumpLaw:
    """Law of a single jump ``(T, Z)`` on ``[start, horizon] x marks``.

    Parameters
    ----------
    marks : MarkSpace
    horizon : float
        End of the observation window; mass beyond it belongs to ``mass_at_infinity``.
    density : callable, optional
        ``density(t) -> (len(t), n_marks)`` nonnegative intensities of the
        absolutely continuous part.
    atoms : iterable of (time, mark, mass)
    mass_at_infinity : float, optional
        Probability of no jump in the window. Computed as the remainder when omitted.
    grid_steps, quad_order : int
        Composite Gauss-Legendre grid used for every integral against the law.
    breakpoints : iterable of float
        Times where the density is not smooth; added to the grid.
    """

    def __init__(
        self,
        marks,
        horizon,
        density=None,
        atoms=(),
        mass_at_infinity=None,
        start=0.0,
        grid_steps=2048,
        quad_order=5,
        breakpoints=(),
    ):
        self.marks = marks
        self.horizon = float(horizon)
        self.start = float(start)
        if not self.horizon > self.start:
            raise ValidationError("horizon must exceed start")
        self.grid_steps = int(grid_steps)
        self.quad_order = int(quad_order)
        self._breakpoints = tuple(float(b) for b in breakpoints)
        self._density_func = density
        n_marks = len(marks)

        by_time = {}
        for t, m, mass in atoms:
            t, mass = float(t), float(mass)
            if mass < 0:
                raise ValidationError(f"negative atom mass {mass}")
            if not (self.start <= t <= self.horizon):
                raise ValidationError(f"atom time {t} outside [{self.start}, {self.horizon}]")
            row = by_time.setdefault(t, np.zeros(n_marks))
            row[marks.index(m)] += mass
        self.atom_times = np.array(sorted(by_time), dtype=float)
        self.atom_masses = (
            np.array([by_time[t] for t in self.atom_times]).reshape(-1, n_marks)
        )
        self._atom_cum = np.vstack([np.zeros(n_marks), np.cumsum(self.atom_masses, axis=0)])
        # summed from the right so tiny survival probabilities keep relative accuracy
        self._atom_tail = np.vstack(
            [np.cumsum(self.atom_masses[::-1], axis=0)[::-1], np.zeros(n_marks)]
        )

        self.edges = uniform_edges(self.start, self.horizon, self.grid_steps, self._breakpoints)
        if density is not None:
            nodes, weights = interval_rule(self.edges[:-1], self.edges[1:], self.quad_order)
            vals = np.asarray(density(nodes.ravel()), dtype=float).reshape(
                nodes.shape + (n_marks,)
            )
            if not np.all(np.isfinite(vals)) or np.any(vals < 0):
                raise ValidationError("density must be finite and nonnegative")
            self._nodes, self._weights, self._node_density = nodes, weights, vals
            cell = np.einsum("cq,cqm->cm", weights, vals)
            self._cum = np.vstack([np.zeros(n_marks), np.cumsum(cell, axis=0)])
            self._tail = np.vstack([np.cumsum(cell[::-1], axis=0)[::-1], np.zeros(n_marks)])
        else:
            self._nodes = self._weights = self._node_density = None
            zeros = np.zeros((len(self.edges), n_marks))
            self._cum = self._tail = zeros
        self.density_total = self._cum[-1].copy()

        finite = float(self.density_total.sum() + self.atom_masses.sum())
        if mass_at_infinity is None:
            mass_at_infinity = 1.0 - finite
            if mass_at_infinity < -MASS_TOL:
                raise ValidationError(f"masses sum to {finite} > 1")
            mass_at_infinity = max(mass_at_infinity, 0.0)
        self.mass_at_infinity = float(mass_at_infinity)
        if self.mass_at_infinity < 0:
            raise ValidationError("mass_at_infinity must be nonnegative")
        total = finite + self.mass_at_infinity
        if abs(total - 1.0) > MASS_TOL:
            raise ValidationError(f"total mass {total!r} differs from 1 by more than {MASS_TOL}")
        self._cutoff = None

    # -- constructors -------------------------------------------------------
    @classmethod
    def exponential(cls, rate, horizon, mark_probs=None, marks=None, start=0.0, **kw):
        """Exponential jump time with independent mark drawn from ``mark_probs``."""
        if marks is None:
            n = 1 if mark_probs is None else len(mark_probs)
            marks = MarkSpace.from_values(np.ones(n))
        probs = np.ones(1) if mark_probs is None else np.asarray(mark_probs, dtype=float)
        probs = probs / probs.sum()
        rate = float(rate)

        def density(t):
            t = np.asarray(t, dtype=float)
            inside = (t >= start) & (t <= horizon)
            d = np.where(inside, rate * np.exp(-rate * (t - start)), 0.0)
            return d[:, None] * probs[None, :]

        return cls(
            marks,
            horizon,
            density=density,
            mass_at_infinity=math.exp(-rate * (horizon - start)),
            start=start,
            **kw,
        )

    @classmethod
    def uniform(cls, low, high, horizon, mark_probs=None, marks=None, **kw):
        if marks is None:
            n = 1 if mark_probs is None else len(mark_probs)
            marks = MarkSpace.from_values(np.ones(n))
        probs = np.ones(1) if mark_probs is None else np.asarray(mark_probs, dtype=float)
        probs = probs / probs.sum()
        low, high = float(low), float(high)
        if high > horizon:
            raise ValidationError("uniform support must end by the horizon")

        def density(t):
            t = np.asarray(t, dtype=float)
            d = np.where((t >= low) & (t <= high), 1.0 / (high - low), 0.0)
            return d[:, None] * probs[None, :]

        bps = tuple(kw.pop("breakpoints", ())) + (low, high)
        return cls(marks, horizon, density=density, mass_at_infinity=0.0,
                   breakpoints=bps, **kw)

    @classmethod
    def from_atoms(cls, marks, atoms, horizon, mass_at_infinity=None, start=0.0, **kw):
        return cls(marks, horizon, atoms=atoms, mass_at_infinity=mass_at_infinity,
                   start=start, **kw)

    def with_grid(self, grid_steps, quad_order=None):
        return JumpLaw(
            self.marks,
            self.horizon,
            density=self._density_func,
            atoms=self.atom_list(),
            mass_at_infinity=self.mass_at_infinity,
            start=self.start,
            grid_steps=grid_steps,
            quad_order=self.quad_order if quad_order is None else quad_order,
            breakpoints=self._breakpoints,
        )

    def with_breakpoints(self, breakpoints):
        """Same law with extra grid edges; returns ``self`` when nothing is new."""
        new = [float(b) for b in breakpoints
               if self.start < b < self.horizon and not np.any(self.edges == b)]
        if not new:
            return self
        return JumpLaw(
            self.marks,
            self.horizon,
            density=self._density_func,
            atoms=self.atom_list(),
            mass_at_infinity=self.mass_at_infinity,
            start=self.start,
            grid_steps=self.grid_steps,
            quad_order=self.quad_order,
            breakpoints=self._breakpoints + tuple(new),
        )

    # -- basic queries ------------------------------------------------------
    @property
    def n_marks(self):
        return len(self.marks)

    @property
    def has_density(self):
        return self._density_func is not None

    def atom_list(self):
        return [
            (float(t), int(m), float(self.atom_masses[i, m]))
            for i, t in enumerate(self.atom_times)
            for m in range(self.n_marks)
            if self.atom_masses[i, m] > 0
        ]

    def density(self, t):
        t = check_time_array(t)
        if self._density_func is None:
            return np.zeros((len(t), self.n_marks))
        inside = (t >= self.start) & (t <= self.horizon)
        out = np.zeros((len(t), self.n_marks))
        if inside.any():
            out[inside] = np.asarray(self._density_func(t[inside]), dtype=float)
        return out

    def _cell(self, t):
        i = np.searchsorted(self.edges, t, side="right") - 1
        return np.clip(i, 0, len(self.edges) - 2)

    def density_upto(self, t):
        """Per-mark density mass on ``[start, t]``."""
        t = np.clip(check_time_array(t), self.start, self.horizon)
        if self._density_func is None:
            return np.zeros((len(t), self.n_marks))
        i = self._cell(t)
        nodes, w = interval_rule(self.edges[i], t, self.quad_order)
        vals = self.density(nodes.ravel()).reshape(nodes.shape + (self.n_marks,))
        return self._cum[i] + np.einsum("nq,nqm->nm", w, vals)

    def density_after(self, t):
        """Per-mark density mass on ``[t, horizon]`` (summed from the right)."""
        t = np.clip(check_time_array(t), self.start, self.horizon)
        if self._density_func is None:
            return np.zeros((len(t), self.n_marks))
        i = self._cell(t)
        nodes, w = interval_rule(t, self.edges[i + 1], self.quad_order)
        vals = self.density(nodes.ravel()).reshape(nodes.shape + (self.n_marks,))
        return self._tail[i + 1] + np.einsum("nq,nqm->nm", w, vals)

    def atoms_upto(self, t, inclusive=True):
        t = check_time_array(t)
        k = np.searchsorted(self.atom_times, t, side="right" if inclusive else "left")
        return self._atom_cum[k]

    def atoms_at(self, t):
        """Per-mark atom masses exactly at each ``t``."""
        return self.atoms_upto(t, True) - self.atoms_upto(t, False)

    def survival(self, t, marks=None):
        """``F^A_t = P(T > t, Z in A)``; ``marks=None`` is every outcome incl. no jump."""
        t = check_time_array(t)
        mask, include_none = self.marks.subset(marks)
        after_atoms = self._atom_tail[np.searchsorted(self.atom_times, t, side="right")]
        per_mark = self.density_after(t) + after_atoms
        val = per_mark @ mask.astype(float) + (self.mass_at_infinity if include_none else 0.0)
        return np.clip(val, 0.0, 1.0)

    def survival_left(self, t, marks=None):
        """``F^A_{t-} = P(T >= t, Z in A)``."""
        t = check_time_array(t)
        mask, include_none = self.marks.subset(marks)
        after_atoms = self._atom_tail[np.searchsorted(self.atom_times, t, side="left")]
        per_mark = self.density_after(t) + after_atoms
        val = per_mark @ mask.astype(float) + (self.mass_at_infinity if include_none else 0.0)
        return np.clip(val, 0.0, 1.0)

    @property
    def cutoff(self):
        """``c = inf{t : F_t = 0}``; ``inf`` if the survival curve never vanishes."""
        if self._cutoff is None:
            self._cutoff = self._find_cutoff()
        return self._cutoff

    def _find_cutoff(self):
        if self.mass_at_infinity > ZERO_SURVIVAL:
            return math.inf
        cand = np.unique(np.concatenate([self.edges, self.atom_times]))
        F = self.survival(cand)
        zero = np.nonzero(F <= ZERO_SURVIVAL)[0]
        if len(zero) == 0:
            return math.inf
        j = zero[0]
        c = float(cand[j])
        if j == 0 or not self.has_density:
            return c
        lo = float(cand[j - 1])
        if self.atoms_at([c])[0].sum() > 0:
            return c
        hi = c
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if self.survival([mid])[0] <= ZERO_SURVIVAL:
                hi = mid
            else:
                lo = mid
        return hi

    def survival_curve(self, marks=None):
        return SurvivalCurve(self, marks)

    def sample(self, num_paths, seed, n_jobs=1):
        """I.i.d. single-jump paths by inverting the survival curve.

        ``T = inf{t : F_t <= U}`` for uniform ``U`` (no jump when
        ``U < mass_at_infinity``); the mark is drawn from the atom masses or
        the density at ``T``.
        """
        from .harness.rng import map_blocks

        num_paths = check_positive_int(num_paths, "num_paths")
        cand = np.unique(np.concatenate([self.edges, self.atom_times]))
        F_cand = self.survival(cand)

        def block(rng, n, b):
            u = rng.random(n)
            v = rng.random(n)
            jumped = u >= self.mass_at_infinity
            ui = u[jumped]
            # F is nonincreasing: first candidate with F <= u brackets T
            j = np.searchsorted(-F_cand, -ui, side="left")
            j = np.clip(j, 0, len(cand) - 1)
            hi = cand[j]
            lo = cand[np.maximum(j - 1, 0)]
            at_atom = (self.atoms_at(hi).sum(axis=1) > 0) & (self.survival_left(hi) > ui)
            at_atom |= j == 0
            T = hi.copy()
            free = ~at_atom
            a, c = lo[free], hi[free]
            target = ui[free]
            for _ in range(60):
                mid = 0.5 * (a + c)
                below = self.survival(mid) <= target
                c = np.where(below, mid, c)
                a = np.where(below, a, mid)
            T[free] = c
            w = np.where(at_atom[:, None], self.atoms_at(T), self.density(T))
            cum = np.cumsum(w, axis=1)
            Z = (cum < v[jumped, None] * cum[:, -1:]).sum(axis=1)
            Z = np.minimum(Z, self.n_marks - 1)
            counts = jumped.astype(np.int64)
            offsets = np.concatenate([[0], np.cumsum(counts)])
            return PathBatch(offsets, T, Z, self.horizon, self.start)

        return PathBatch.concat(map_blocks(block, num_paths, seed, "single_jump", n_jobs))

    def integral(self, func):
        """Cumulative integral ``t -> int_{]start, t] x E} func dnu``."""
        return CumulativeIntegral(self, func)

    def expectation(self, func, value_at_infinity=0.0):
        """``E[func(T, Z)]`` with ``value_at_infinity`` on the no-jump event."""
        integ = self.integral(func)
        atom_at_start = self.atoms_at([self.start])[0]
        start_part = 0.0
        if atom_at_start.sum() > 0:
            start_part = float(np.asarray(func(np.array([self.start])))[0] @ atom_at_start)
        return float(integ.total) + start_part + value_at_infinity * self.mass_at_infinity


class SurvivalCurve:
    """Right-continuous survival ``F^A_t`` with left limits and the cutoff ``c``."""

    def __init__(self, law, marks=None):
        self.law = law
        self.marks = marks
        self.cutoff = law.cutoff

    def __call__(self, t):
        return self.law.survival(t, self.marks)

    def left(self, t):
        return self.law.survival_left(t, self.marks)


class CumulativeIntegral:
    """Running integral of ``func`` against a :class:`JumpLaw` on ``]start, t]``.

    Full grid cells are precomputed so each evaluation costs one partial-cell
    quadrature plus an atom lookup.
    """

    def __init__(self, law, func):
        self.law = law
        self.func = func
        n_marks = law.n_marks
        if law.has_density:
            nodes = law._nodes
            vals = np.asarray(func(nodes.ravel()), dtype=float).reshape(nodes.shape + (n_marks,))
            cell = np.einsum("cq,cqm->c", law._weights, vals * law._node_density)
            self._fwd = np.concatenate([[0.0], np.cumsum(cell)])
            self._bwd = np.concatenate([np.cumsum(cell[::-1])[::-1], [0.0]])
        else:
            self._fwd = self._bwd = np.zeros(len(law.edges))
        if len(law.atom_times):
            av = np.asarray(func(law.atom_times), dtype=float).reshape(-1, n_marks)
            contrib = np.einsum("am,am->a", av, law.atom_masses)
            contrib[law.atom_times <= law.start] = 0.0
        else:
            contrib = np.zeros(0)
        self._atom_cum = np.concatenate([[0.0], np.cumsum(contrib)])
        self._atom_tail = np.concatenate([np.cumsum(contrib[::-1])[::-1], [0.0]])
        self.total = float(self._fwd[-1] + self._atom_cum[-1])

    def _partial(self, a, b):
        law = self.law
        nodes, w = interval_rule(a, b, law.quad_order)
        flat = nodes.ravel()
        vals = np.asarray(self.func(flat), dtype=float) * law.density(flat)
        vals = vals.sum(axis=1).reshape(nodes.shape)
        return (w * vals).sum(axis=1)

    def upto(self, t, inclusive=True):
        """``int_{]start, t]}`` (``]start, t[`` when ``inclusive`` is False)."""
        law = self.law
        t = check_time_array(t)
        tc = np.clip(t, law.start, law.horizon)
        out = np.zeros(len(t))
        if law.has_density:
            i = law._cell(tc)
            out += self._fwd[i] + self._partial(law.edges[i], tc)
        k = np.searchsorted(law.atom_times, t, side="right" if inclusive else "left")
        out += self._atom_cum[k]
        return out

    def after(self, t):
        """``int_{]t, horizon]}``; accurate when the remaining mass is small."""
        law = self.law
        t = check_time_array(t)
        tc = np.clip(t, law.start, law.horizon)
        out = np.zeros(len(t))
        if law.has_density:
            i = law._cell(tc)
            out += self._bwd[i + 1] + self._partial(tc, law.edges[i + 1])
        k = np.searchsorted(law.atom_times, t, side="right")
        out += self._atom_tail[k]
        return out


def survival(law, t, marks=None):
    """``F^A_t`` of a law; scalar in, scalar out."""
    val = law.survival(t, marks)
    return float(val[0]) if np.ndim(t) == 0 else val


def survival_left(law, t, marks=None):
    val = law.survival_left(t, marks)
    return float(val[0]) if np.ndim(t) == 0 else val


class CompensatorSpec:
    """Predictable compensator ``mu_p`` as hazard density plus atoms.

    Subclasses override :meth:`density` and :meth:`atoms`. Both may look at
    the path but only at events strictly before the evaluation time.
    """

    history_dependent = False

    def __init__(self, marks, horizon, start=0.0):
        self.marks = marks
        self.horizon = float(horizon)
        self.start = float(start)

    @property
    def n_marks(self):
        return len(self.marks)

    has_density = True

    def density(self, t, path=None):
        return np.zeros((len(np.atleast_1d(t)), self.n_marks))

    def atoms(self, path=None):
        """Atom times in ``]start, horizon]`` and per-mark masses ``(n, n_marks)``."""
        return np.zeros(0), np.zeros((0, self.n_marks))

    def breakpoints(self, path=None):
        return np.zeros(0)


class DeterministicCompensator(CompensatorSpec):
    """History-free compensator: ``rates`` is an array or ``t -> (n, n_marks)``."""

    def __init__(self, marks, horizon, rates=None, atoms=(), start=0.0, breakpoints=()):
        super().__init__(marks, horizon, start)
        self._rates = rates
        self.has_density = rates is not None
        by_time = {}
        for t, m, mass in atoms:
            row = by_time.setdefault(float(t), np.zeros(self.n_marks))
            row[marks.index(m)] += float(mass)
        self._atom_times = np.array(sorted(by_time), dtype=float)
        self._atom_masses = np.array([by_time[t] for t in self._atom_times]).reshape(
            -1, self.n_marks
        )
        if np.any(self._atom_masses.sum(axis=1) > 1 + MASS_TOL):
            raise ValidationError("total atom mass at one time exceeds 1")
        self._bps = np.asarray(breakpoints, dtype=float)

    def density(self, t, path=None):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self._rates is None:
            return np.zeros((len(t), self.n_marks))
        if callable(self._rates):
            out = np.asarray(self._rates(t), dtype=float).reshape(len(t), self.n_marks)
        else:
            out = np.broadcast_to(np.asarray(self._rates, float), (len(t), self.n_marks)).copy()
        out[(t < self.start) | (t > self.horizon)] = 0.0
        return out

    def atoms(self, path=None):
        return self._atom_times, self._atom_masses

    def breakpoints(self, path=None):
        return self._bps


class SingleJumpCompensator(CompensatorSpec):
    """Compensator of the single-jump measure: ``nu(ds x dz) / F_{s-}`` stopped at ``T``.

    Beyond the cutoff ``c`` (where ``F_{t-} = 0``) the hazard is set to zero;
    that region carries no predictable quadratic variation.
    """

    history_dependent = True

    def __init__(self, law):
        super().__init__(law.marks, law.horizon, law.start)
        self.law = law
        self.has_density = law.has_density
        self.null_after = law.cutoff

    def hazard(self, t):
        """Hazard before the jump, ``density(t) / F_{t-}`` (zero where ``F_{t-} = 0``)."""
        t = check_time_array(t)
        Fl = self.law.survival_left(t)
        d = self.law.density(t)
        ok = Fl > ZERO_SURVIVAL
        out = np.zeros_like(d)
        out[ok] = d[ok] / Fl[ok, None]
        return out

    def density(self, t, path=None):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        T = math.inf if path is None else path.first_time
        out = self.hazard(t)
        out[t > T] = 0.0
        return out

    def atom_hazards(self):
        law = self.law
        if not len(law.atom_times):
            return law.atom_times, law.atom_masses
        Fl = law.survival_left(law.atom_times)
        with np.errstate(divide="ignore", invalid="ignore"):
            m = np.where(Fl[:, None] > 0, law.atom_masses / Fl[:, None], 0.0)
        keep = law.atom_times > law.start
        return law.atom_times[keep], m[keep]

    def atoms(self, path=None):
        times, masses = self.atom_hazards()
        T = math.inf if path is None else path.first_time
        keep = times <= T
        return times[keep], masses[keep]

    def breakpoints(self, path=None):
        bps = list(self.law._breakpoints)
        if path is not None and len(path):
            bps.append(path.first_time)
        if math.isfinite(self.null_after):
            bps.append(self.null_after)
        return np.asarray(bps, dtype=float)


def single_jump_compensator(law):
    """Compensator of the measure generated by one jump with law ``law``."""
    return SingleJumpCompensator(law)


class PredictableField:
    """Function ``W(t, z)`` on time x marks, optionally depending on the strict past.

    ``func(t)`` (or ``func(t, path)`` when ``history_dependent``) returns an
    array of shape ``(len(t), n_marks)``. History-dependent functions must only
    use events strictly before each evaluation time.
    """

    def __init__(self, func, n_marks, history_dependent=False, name=None):
        self.func = func
        self.n_marks = int(n_marks)
        self.history_dependent = bool(history_dependent)
        self.name = name

    def __call__(self, t, path=None):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self.history_dependent:
            out = self.func(t, path)
        else:
            out = self.func(t)
        out = np.asarray(out, dtype=float)
        if out.shape != (len(t), self.n_marks):
            out = np.broadcast_to(out, (len(t), self.n_marks)).astype(float)
        return out

    @classmethod
    def constant(cls, value, n_marks):
        vals = np.broadcast_to(np.asarray(value, dtype=float), (n_marks,)).copy()
        return cls(lambda t: np.broadcast_to(vals, (len(t), n_marks)), n_marks, name=f"const{vals}")

    @classmethod
    def from_callable(cls, func, n_marks):
        return cls(func, n_marks)

    def _combine(self, other, op):
        hist = self.history_dependent or getattr(other, "history_dependent", False)
        if isinstance(other, PredictableField):
            def f(t, path=None):
                return op(self(t, path), other(t, path))
        else:
            c = float(other)

            def f(t, path=None):
                return op(self(t, path), c)
        if hist:
            return PredictableField(f, self.n_marks, True)
        return PredictableField(lambda t: f(t), self.n_marks, False)

    def __add__(self, other):
        return self._combine(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __mul__(self, other):
        return self._combine(other, np.multiply)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def squared(self):
        return self._combine(self, np.multiply)

    def restricted(self, mask):
        """Zero the field outside the marks in ``mask``."""
        mask = np.asarray(mask, dtype=float)
        return self._combine(PredictableField.constant(mask, self.n_marks), np.multiply)


@dataclass(frozen=True)
class MartingalePath:
    """Cadlag path known exactly at its knots.

    ``values[i]`` is the right-continuous value at ``times[i]``; evaluation
    between knots returns the last knot value.
    """

    times: np.ndarray
    values: np.ndarray
    jump_times: np.ndarray
    jump_sizes: np.ndarray

    @property
    def initial(self):
        return float(self.values[0])

    @property
    def terminal(self):
        return float(self.values[-1])

    def __call__(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        i = np.searchsorted(self.times, t, side="right") - 1
        return self.values[np.clip(i, 0, len(self.values) - 1)]

    def left(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        idx = np.searchsorted(self.jump_times, t)
        hit = (idx < len(self.jump_times)) & (
            self.jump_times[np.minimum(idx, len(self.jump_times) - 1)] == t
        ) if len(self.jump_times) else np.zeros(len(t), bool)
        jumps = np.where(hit, self.jump_sizes[np.minimum(idx, max(len(self.jump_sizes) - 1, 0))]
                         if len(self.jump_sizes) else 0.0, 0.0)
        return self(t) - jumps

    def shifted(self, c):
        return MartingalePath(self.times, self.values + c, self.jump_times, self.jump_sizes)


FieldFunc = Callable[[np.ndarray], np.ndarray]
