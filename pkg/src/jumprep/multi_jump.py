"""Representation for measures with finitely many, well-ordered jumps.

The integrand is built one inter-jump interval at a time: given the history
up to the latest jump, the next jump ``(T, Z)`` has a single-jump law and the
payoff seen from that history is a function ``h(T, Z)``; the single-jump
construction then gives the integrand on the interval.

Two model families are supported:

* :class:`~jumprep.harness.discrete.DiscreteModel` with an arbitrary payoff
  on outcome sequences (exact recursion over jump histories);
* :class:`CompoundPoissonModel` with a payoff ``f(X_T)`` of a lattice mark
  sum ``X``. The value ``u(t, k) = E[f(X_T) | state k at t]`` is exact up to a
  Poisson tail below ``1e-17`` and the integrand is ``u(t, k + j_z) - u(t, k)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import signal, stats
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import UnsupportedModelError, ValidationError, check_positive_int, check_time_array
from .harness.discrete import DiscreteCompensator, DiscreteModel
from .harness.rng import map_blocks, stream
from .jump_calculus import _mean_se, stochastic_integral
from .measure_core import (
    NO_MARK,
    CompensatorSpec,
    DeterministicCompensator,
    JumpLaw,
    JumpPath,
    MarkSpace,
    PathBatch,
    PredictableField,
)
from .single_jump import PayoffFunctional, chou_meyer_integrand

POISSON_TAIL = 1e-17


def tail_bound(total_rate, horizon, cap):
    """``P(more than cap jumps) <= (Lambda T)^(N+1) / (N+1)!``."""
    a = total_rate * horizon
    if a == 0:
        return 0.0
    return math.exp((cap + 1) * math.log(a) - math.lgamma(cap + 2))


def poisson_cutoff(mean, tail=POISSON_TAIL):
    """Smallest ``n`` with ``P(Poisson(mean) > n) <= tail``."""
    if mean <= 0:
        return 0
    n = int(mean)
    log_tail = math.log(tail)
    while stats.poisson.logsf(n, mean) > log_tail:
        n += max(1, int(math.sqrt(mean)) // 4)
    return n


def default_cap(total_rate, horizon, target=1e-12):
    n = 0
    while tail_bound(total_rate, horizon, n) > target:
        n += 1
    return max(n, 1)


# -- models ---------------------------------------------------------------


class HazardCompensator(CompensatorSpec):
    """Density-only compensator from a history-dependent hazard."""

    history_dependent = True

    def __init__(self, model):
        super().__init__(model.marks, model.horizon)
        self.model = model

    def density(self, t, path=None):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        path = path if path is not None else JumpPath.empty(self.horizon)
        out = np.asarray(self.model.hazard(t, path), dtype=float).reshape(len(t), self.n_marks)
        out[(t < self.start) | (t > self.horizon)] = 0.0
        return out


class MultiJumpModel:
    """Marked point process given by a hazard ``lambda(t, z | strict past)``.

    Parameters
    ----------
    marks : MarkSpace
    hazard : callable
        ``hazard(t, path) -> (len(t), n_marks)``; may look only at events of
        ``path`` strictly before each ``t``.
    horizon : float
    rate_bound : float
        Upper bound on the total hazard, used for thinning.
    max_jumps : int, optional
        Cap on simulated jumps per path; hits are counted.
    """

    def __init__(self, marks, hazard, horizon, rate_bound, max_jumps=None):
        self.marks = marks
        self.hazard = hazard
        self.horizon = float(horizon)
        self.rate_bound = float(rate_bound)
        if self.rate_bound < 0:
            raise ValidationError("rate_bound must be nonnegative")
        self.max_jumps = (default_cap(self.rate_bound, self.horizon)
                          if max_jumps is None else int(max_jumps))

    @property
    def n_marks(self):
        return len(self.marks)

    @property
    def cap_tail_bound(self):
        return tail_bound(self.rate_bound, self.horizon, self.max_jumps)

    def compensator(self):
        return HazardCompensator(self)

    def simulate(self, num_paths, seed, n_jobs=1):
        """Thinning against ``rate_bound``; one Philox stream per block of paths."""
        T, B, cap = self.horizon, self.rate_bound, self.max_jumps

        def block(rng, n, b):
            paths, hits = [], 0
            for _ in range(n):
                times, marks = [], []
                t = 0.0
                while B > 0:
                    t += rng.exponential(1.0 / B)
                    if t > T:
                        break
                    path = JumpPath(times, marks, T)
                    lam = np.asarray(self.hazard(np.array([t]), path), float).reshape(-1)
                    tot = lam.sum()
                    if tot > B * (1 + 1e-12):
                        raise ValidationError(f"hazard {tot:g} exceeds rate_bound {B:g} at t={t:g}")
                    u = rng.random() * B
                    if u < tot:
                        if len(times) >= cap:
                            hits += 1
                            break
                        times.append(t)
                        marks.append(int(np.searchsorted(np.cumsum(lam), u, side="right")))
                paths.append(JumpPath(times, marks, T))
            out = PathBatch.from_paths(paths, T)
            out.cap_hits = hits
            return out

        return PathBatch.concat(map_blocks(block, num_paths, seed, "thinning", n_jobs))


class CompoundPoissonModel(MultiJumpModel):
    """Independent Poisson streams per mark with constant rates."""

    def __init__(self, marks, rates, horizon, max_jumps=None):
        rates = np.asarray(rates, dtype=float).reshape(len(marks))
        if np.any(rates < 0) or not np.all(np.isfinite(rates)):
            raise ValidationError("rates must be finite and nonnegative")
        self.rates = rates
        super().__init__(marks, self._hazard, horizon, rates.sum(), max_jumps)

    def _hazard(self, t, path=None):
        return np.broadcast_to(self.rates, (len(t), len(self.rates)))

    @classmethod
    def from_values(cls, values, rates, horizon, max_jumps=None):
        return cls(MarkSpace.from_values(values), rates, horizon, max_jumps)

    def compensator(self):
        return DeterministicCompensator(self.marks, self.horizon, self.rates)

    def simulate(self, num_paths, seed, n_jobs=1):
        T, cap = self.horizon, self.max_jumps
        lam = self.rates.sum()
        probs = self.rates / lam if lam > 0 else None

        def block(rng, n, b):
            counts = rng.poisson(lam * T, n) if lam > 0 else np.zeros(n, np.int64)
            hits = int(np.sum(counts > cap))
            counts = np.minimum(counts, cap)
            total = int(counts.sum())
            times = rng.uniform(0.0, T, total)
            marks = rng.choice(len(self.rates), total, p=probs) if total else np.zeros(0, np.int64)
            pidx = np.repeat(np.arange(n), counts)
            order = np.lexsort((times, pidx))
            offsets = np.concatenate([[0], np.cumsum(counts)])
            return PathBatch(offsets, times[order], marks[order], T, 0.0, hits)

        return PathBatch.concat(map_blocks(block, num_paths, seed, "compound_poisson", n_jobs))


def simulate_paths(model, num_paths, seed, n_jobs=1):
    """I.i.d. paths of ``model`` as a :class:`PathBatch` (``cap_hits`` counts truncations)."""
    num_paths = check_positive_int(num_paths, "num_paths")
    return model.simulate(num_paths, seed, n_jobs=n_jobs)


# -- payoffs ---------------------------------------------------------------


class MarkSumPayoff:
    """``f(X_T)`` with ``X_t = x0 + sum_{T_i <= t} w(Z_i) - drift * t``.

    Parameters
    ----------
    func : callable
        Vectorized terminal function.
    weights : array or float, optional
        Per-mark increments (a scalar applies to every mark); defaults to the mark values.
    drift : float or "compensated"
        ``"compensated"`` uses ``sum_z lambda_z w_z`` so that ``X`` is a martingale.
    lattice_step : float, optional
        Common step of the weights; inferred when omitted.
    """

    def __init__(self, func, weights=None, drift=0.0, x0=0.0, lattice_step=None, name=None):
        self.func = func
        self.weights = None if weights is None else np.asarray(weights, dtype=float)
        self.drift = drift
        self.x0 = float(x0)
        self.lattice_step = lattice_step
        self.name = name

    def weights_for(self, model):
        w = model.marks.value_array if self.weights is None else self.weights
        if w.ndim == 0:
            w = np.full(model.n_marks, float(w))
        if len(w) != model.n_marks:
            raise ValidationError("payoff weights do not match the mark space")
        return w

    def drift_for(self, model):
        if isinstance(self.drift, str):
            if self.drift != "compensated":
                raise ValidationError(f"unknown drift {self.drift!r}")
            return float(np.dot(model.rates, self.weights_for(model)))
        return float(self.drift)

    def statistic(self, batch, model, t=None):
        """``X_t`` per path (``t`` defaults to the horizon)."""
        t = model.horizon if t is None else float(t)
        w = self.weights_for(model)
        vals = np.where(batch.times <= t, w[batch.marks], 0.0)
        s = np.zeros(len(batch))
        np.add.at(s, batch.path_index, vals)
        return self.x0 + s - self.drift_for(model) * t

    def __call__(self, batch, model):
        return np.asarray(self.func(self.statistic(batch, model)), dtype=float)

    @classmethod
    def count(cls):
        return cls(lambda x: x, weights=1.0, name="count")


def _lattice_step(w, step=None):
    nz = np.abs(w[w != 0])
    if step is None:
        step = float(nz.min()) if len(nz) else 1.0
    j = w / step
    if not np.allclose(j, np.rint(j), rtol=0, atol=1e-9):
        raise UnsupportedModelError("mark weights are not multiples of a common lattice step")
    return step, np.rint(j).astype(np.int64)


class LatticeValue:
    """``u(t, k) = E[F(k + J_{T-t})]`` for a compound Poisson walk ``J`` on the integers.

    ``J`` has total rate ``Lambda`` and jump distribution ``p_z`` on steps
    ``j_z``. With ``q^{*n}`` the n-fold step law,
    ``u(t, k) = sum_n Poisson(n; Lambda (T - t)) sum_j q^{*n}(j) F(k + j)``,
    truncated where the Poisson tail is below ``1e-17``.
    """

    def __init__(self, rates, steps, horizon, terminal, k_min, k_max, n_max=None):
        rates = np.asarray(rates, dtype=float)
        steps = np.asarray(steps, dtype=np.int64)
        self.horizon = float(horizon)
        self.total_rate = float(rates.sum())
        self.steps = steps
        nmax = poisson_cutoff(self.total_rate * self.horizon) + 2 if self.total_rate > 0 else 0
        if n_max is not None:
            nmax = max(nmax, int(n_max))
        self.n_max = nmax
        lo = min(0, int(steps.min())) * nmax
        hi = max(0, int(steps.max())) * nmax
        self.k_min, self.k_max = int(k_min), int(k_max)
        width = hi - lo + 1
        powers = np.zeros((nmax + 1, width))
        powers[0, -lo] = 1.0
        p = rates / self.total_rate if self.total_rate > 0 else rates
        for n in range(1, nmax + 1):
            prev = powers[n - 1]
            cur = powers[n]
            for pz, jz in zip(p, steps):
                if pz == 0:
                    continue
                if jz >= 0:
                    cur[jz:] += pz * prev[: width - jz]
                else:
                    cur[:jz] += pz * prev[-jz:]
        m = np.arange(self.k_min + lo, self.k_max + hi + 1)
        Fm = np.asarray(terminal(m), dtype=float)
        self._F = Fm
        self._m0 = self.k_min + lo
        n_k = self.k_max - self.k_min + 1
        # E[n, k] = sum_j q^{*n}(j) F(k + j)
        E = np.empty((nmax + 1, n_k))
        for n in range(nmax + 1):
            E[n] = signal.correlate(Fm, powers[n], mode="valid", method="auto")[:n_k]
        self._E = E

    def _weights(self, t):
        t = check_time_array(t)
        tau = np.clip(self.horizon - t, 0.0, None)
        n = np.arange(self.n_max + 1)
        return stats.poisson.pmf(n[None, :], self.total_rate * tau[:, None])

    def _index(self, k):
        k = np.asarray(k, dtype=np.int64)
        if np.any(k < self.k_min) or np.any(k > self.k_max):
            raise ValidationError(f"lattice state outside [{self.k_min}, {self.k_max}]")
        return k - self.k_min

    def value(self, t, k):
        """``u(t, k)`` for matching arrays ``t`` and ``k``."""
        t = check_time_array(t)
        k = np.broadcast_to(np.asarray(k, dtype=np.int64), t.shape)
        w = self._weights(t)
        return np.einsum("tn,nt->t", w, self._E[:, self._index(k)])

    def terminal(self, k):
        return self._F[np.asarray(k, dtype=np.int64) - self._m0]

    def table(self, times, k_lo=None, k_hi=None):
        """``u`` on ``times x [k_lo, k_hi]`` (default the whole lattice)."""
        lo = self.k_min if k_lo is None else max(int(k_lo), self.k_min)
        hi = self.k_max if k_hi is None else min(int(k_hi), self.k_max)
        return self._weights(times) @ self._E[:, lo - self.k_min: hi - self.k_min + 1]


# -- integrands ------------------------------------------------------------


class MarkovJumpField(PredictableField):
    """``H(t, z | X_{t-}) = u(t, k + j_z) - u(t, k)`` for a lattice mark-sum payoff."""

    def __init__(self, model, payoff, lattice):
        self.model = model
        self.payoff = payoff
        self.lattice = lattice
        w = payoff.weights_for(model)
        self.step, self.jumps = _lattice_step(w, payoff.lattice_step)
        self.initial_value = float(lattice.value([0.0], [0])[0])
        super().__init__(self._evaluate, model.n_marks, history_dependent=True,
                         name="well_ordered_markov")

    def state(self, t, path):
        """Lattice index of the mark sum from events strictly before each ``t``."""
        t = check_time_array(t)
        cum = np.concatenate([[0], np.cumsum(self.jumps[path.marks])])
        return cum[np.searchsorted(path.times, t, side="left")]

    def _evaluate(self, t, path):
        path = path if path is not None else JumpPath.empty(self.model.horizon)
        k = self.state(t, path)
        base = self.lattice.value(t, k)
        out = np.empty((len(t), self.n_marks))
        for z, jz in enumerate(self.jumps):
            out[:, z] = self.lattice.value(t, k + jz) - base
        return out

    def value(self, t, path):
        """``M_t = u(t, X_t)`` including events at ``t``."""
        t = check_time_array(t)
        cum = np.concatenate([[0], np.cumsum(self.jumps[path.marks])])
        k = cum[np.searchsorted(path.times, t, side="right")]
        return self.lattice.value(t, k)

    def interval_law(self, history):
        """Law of the next jump after ``history`` (a path holding the events so far)."""
        m = self.model
        start = float(history.times[-1]) if len(history) else 0.0
        lam = m.rates.sum()
        if lam == 0:
            return JumpLaw(m.marks, m.horizon, mass_at_infinity=1.0, start=start, grid_steps=1)
        return JumpLaw.exponential(lam, m.horizon, m.rates / lam, m.marks, start=start)

    def interval_integrand(self, history):
        """Single-jump integrand on the interval after ``history``, built from scratch."""
        law = self.interval_law(history)
        k = int(np.sum(self.jumps[history.marks]))
        jumps = self.jumps
        lat = self.lattice

        def h(t):
            return np.column_stack([lat.value(t, np.full(len(t), k + jz)) for jz in jumps])

        payoff = PayoffFunctional(h, self.n_marks, float(lat.terminal(k)))
        return chou_meyer_integrand(payoff, law)


class DiscreteWellOrderedField(PredictableField):
    """Integrand on a :class:`DiscreteModel` built interval by interval.

    Histories are tuples of ``(slot, mark)``. For each history the next jump
    has an atomic law on the later slots; its single-jump integrand gives
    ``H`` until that jump.
    """

    def __init__(self, model, payoff):
        self.model = model
        self.payoff = payoff
        self._values = {}
        self._fields = {}
        super().__init__(self._evaluate, model.n_marks, history_dependent=True,
                         name="well_ordered_discrete")
        self.initial_value = self.value(())

    def _outcomes(self, hist, upto):
        out = [NO_MARK] * upto
        for k, z in hist:
            if k < upto:
                out[k] = z
        return tuple(out)

    def interval_law(self, hist):
        m = self.model
        j = hist[-1][0] if hist else -1
        if j == m.num_slots - 1:
            return None
        pre = list(self._outcomes(hist, j + 1))
        atoms, survive = [], 1.0
        for k in range(j + 1, m.num_slots):
            p = m.probs(k, tuple(pre))
            for z in range(m.n_marks):
                atoms.append((m.slot_times[k], z, survive * p[z]))
            survive *= 1.0 - p.sum()
            pre.append(NO_MARK)
        start = m.slot_times[j] if j >= 0 else 0.0
        return JumpLaw.from_atoms(m.marks, atoms, m.horizon, mass_at_infinity=max(survive, 0.0),
                                  start=start, grid_steps=1)

    def value(self, hist):
        """Conditional expectation right after the last jump of ``hist``."""
        hist = tuple(hist)
        if hist in self._values:
            return self._values[hist]
        m = self.model
        law = self.interval_law(hist)
        none_after = float(self.payoff(self._outcomes(hist, m.num_slots)))
        if law is None:
            self._values[hist] = none_after
            self._fields[hist] = None
            return none_after
        j = hist[-1][0] if hist else -1
        slots = np.arange(j + 1, m.num_slots)
        table = np.zeros((len(slots), m.n_marks))
        for i, k in enumerate(slots):
            for z in range(m.n_marks):
                if law.atom_masses[i, z] > 0:
                    table[i, z] = self.value(hist + ((int(k), z),))
        h = PayoffFunctional.from_table(m.slot_times[slots], table, none_after)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            g = chou_meyer_integrand(h, law)
        self._fields[hist] = g
        self._values[hist] = g.initial_value
        return g.initial_value

    def interval_integrand(self, hist):
        hist = tuple(hist)
        self.value(hist)
        return self._fields[hist]

    def history_of(self, path, t):
        k = int(np.searchsorted(path.times, t, side="left"))
        if k == 0:
            return ()
        slots = self.model.slot_of(path.times[:k])
        return tuple((int(s), int(z)) for s, z in zip(slots, path.marks[:k]))

    def _evaluate(self, t, path):
        path = path if path is not None else JumpPath.empty(self.model.horizon)
        out = np.zeros((len(t), self.n_marks))
        nb = np.searchsorted(path.times, t, side="left")
        for n in np.unique(nb):
            sel = nb == n
            g = self.interval_integrand(self.history_of(path, t[sel][0]))
            if g is not None:
                out[sel] = g(t[sel])
        return out


def markov_lattice(model, payoff, cap=None):
    """:class:`LatticeValue` of a mark-sum payoff on a compound Poisson model."""
    if not isinstance(model, CompoundPoissonModel):
        raise UnsupportedModelError("lattice values need a compound Poisson model")
    w = payoff.weights_for(model)
    step, jumps = _lattice_step(w, payoff.lattice_step)
    cap = model.max_jumps if cap is None else cap
    drift = payoff.drift_for(model)
    T = model.horizon
    lam = model.rates.sum()
    nmax = poisson_cutoff(lam * T) + 2 if lam > 0 else 0
    nmax = max(nmax, cap)
    k_min = min(0, int(jumps.min())) * cap
    k_max = max(0, int(jumps.max())) * cap

    def terminal(m):
        return payoff.func(payoff.x0 + step * m - drift * T)

    return LatticeValue(model.rates, jumps, T, terminal, k_min, k_max, n_max=nmax)


def well_ordered_integrand(payoff, model):
    """History-dependent integrand ``H`` with ``E[payoff | F_t] = M_0 + (H * mu~)_t``.

    Parameters
    ----------
    payoff : MarkSumPayoff or callable on outcome tuples
    model : CompoundPoissonModel or DiscreteModel

    Returns
    -------
    PredictableField
        Has ``initial_value`` and ``interval_integrand(history)``.
    """
    if isinstance(model, DiscreteModel):
        if not callable(payoff):
            raise UnsupportedModelError("discrete models take a payoff on outcome tuples")
        return DiscreteWellOrderedField(model, payoff)
    if isinstance(model, CompoundPoissonModel) and isinstance(payoff, MarkSumPayoff):
        return MarkovJumpField(model, payoff, markov_lattice(model, payoff))
    raise UnsupportedModelError(
        "conditional payoffs are computable for discrete models and lattice mark-sum "
        "payoffs on compound Poisson models only"
    )


# -- batch engine ----------------------------------------------------------


@dataclass
class LatticeComponent:
    """One lattice field inside the batch engine: ``coef * (u(t, k + j_z) - u(t, k))``."""

    field: MarkovJumpField
    jumps: np.ndarray  # per batch mark; 0 where the field does not see the mark
    mask: np.ndarray  # 1.0 where the field is defined
    coef: float = 1.0


def lattice_component(field, n_marks, coef=1.0):
    jumps = np.zeros(n_marks, dtype=np.int64)
    mask = np.zeros(n_marks)
    jumps[: len(field.jumps)] = field.jumps
    mask[: len(field.jumps)] = 1.0
    return LatticeComponent(field, jumps, mask, coef)


def _states_before(batch, jumps):
    """Lattice state just before each event of the batch, within its own path."""
    step = jumps[batch.marks]
    ex = np.cumsum(step) - step
    counts = batch.counts
    has = counts > 0
    base = np.zeros(len(batch), dtype=np.int64)
    base[has] = ex[batch.offsets[:-1][has]]
    return ex - np.repeat(base, counts), step


def grid_states(batch, jumps, times):
    """Lattice state from events at or before each of ``times``, shape ``(paths, times)``."""
    times = np.asarray(times, dtype=float)
    col = np.searchsorted(times, batch.times, side="left")
    grid = np.zeros((len(batch), len(times) + 1), dtype=np.int64)
    np.add.at(grid, (batch.path_index, col), jumps[batch.marks])
    return np.cumsum(grid, axis=1)[:, : len(times)]


def frozen_integrals(components, batch, rates, n_cells=256, multiplier=None, block_size=4096):
    """Per-path ``(H * mu~)_T`` and ``(H^2 * <mu~>)_T`` with ``H`` frozen on time cells.

    ``H(t, z) = sum_c coef_c (u_c(t_j, k_c + j_cz) - u_c(t_j, k_c))`` on
    ``]t_j, t_{j+1}]`` with ``k_c`` the state just before ``t``. Freezing time
    keeps ``H`` predictable, so the integral is an exact martingale. The
    compensator is atomless with constant ``rates``.

    ``multiplier(lo, hi)`` may return per-path, per-cell factors ``(hi - lo, n_cells)``.
    """
    T = batch.horizon
    rates = np.asarray(rates, dtype=float)
    M = len(rates)
    cell_t = T * np.arange(n_cells + 1) / n_cells
    dt = T / n_cells
    n = len(batch)
    pre = [_states_before(batch, c.jumps) for c in components]
    tables, offs = [], []
    for c, (bef, step) in zip(components, pre):
        # only the reached part of the lattice is tabulated; values do not depend on the cut
        lo = min(0, int(bef.min(initial=0)), int((bef + step).min(initial=0)))
        hi = max(0, int(bef.max(initial=0)), int((bef + step).max(initial=0)))
        lo += min(0, int(c.jumps.min()))
        hi += max(0, int(c.jumps.max()))
        lo, hi = max(lo, c.field.lattice.k_min), min(hi, c.field.lattice.k_max)
        tables.append(c.field.lattice.table(cell_t[:-1], lo, hi))
        offs.append(lo)
    X = np.zeros(n)
    Q = np.zeros(n)

    def H_at(j, states):
        out = np.zeros((len(j), M))
        for c, tab, off, k in zip(components, tables, offs, states):
            flat = tab.ravel()
            idx = j * tab.shape[1] + (k - off)
            base = np.take(flat, idx)
            for z in range(M):
                if c.mask[z]:
                    out[:, z] += c.coef * (np.take(flat, idx + c.jumps[z]) - base)
        return out

    for lo in range(0, n, block_size):
        hi = min(lo + block_size, n)
        a, b = batch.offsets[lo], batch.offsets[hi]
        times = batch.times[a:b]
        marks = batch.marks[a:b]
        nb = hi - lo
        pidx = np.repeat(np.arange(nb), np.diff(batch.offsets[lo:hi + 1]))
        cell = np.clip(np.ceil(times * n_cells / T).astype(np.int64) - 1, 0, n_cells - 1)
        mult = None if multiplier is None else np.asarray(multiplier(lo, hi), dtype=float)
        starts, before, after = [], [], []
        for bef, step in pre:
            before.append(bef[a:b])
            after.append(bef[a:b] + step[a:b])
            grid = np.zeros((nb, n_cells + 1), dtype=np.int64)
            np.add.at(grid, (pidx, cell + 1), step[a:b])
            starts.append(np.cumsum(grid, axis=1)[:, :n_cells].ravel())
        jj = np.tile(np.arange(n_cells), nb)
        Hs = H_at(jj, starts).reshape(nb, n_cells, M)
        A = Hs @ rates
        A2 = (Hs**2) @ rates
        m_cells = np.ones((nb, n_cells)) if mult is None else mult
        comp = (m_cells * A).sum(axis=1) * dt
        qv = (m_cells**2 * A2).sum(axis=1) * dt
        jump = np.zeros(nb)
        if len(times):
            Hb = H_at(cell, before)
            Ha = H_at(cell, after)
            me = m_cells[pidx, cell]
            np.add.at(jump, pidx, me * Hb[np.arange(len(marks)), marks])
            rest = cell_t[cell + 1] - times
            np.add.at(comp, pidx, me * ((Ha - Hb) @ rates) * rest)
            np.add.at(qv, pidx, me**2 * ((Ha**2 - Hb**2) @ rates) * rest)
        X[lo:hi] = jump - comp
        Q[lo:hi] = qv
    return X, Q


# -- truncation studies ----------------------------------------------------


class TruncationFamily:
    """Nested finite-activity truncations of a mark-sum model.

    Marks are listed in level order; level ``n`` keeps the first
    ``level_size(n)`` marks. Marks past the largest simulated level enter
    only through their terminal Poisson counts.

    Parameters
    ----------
    values, rates : array
        Jump sizes ``z_k`` and intensities ``lambda_k``.
    horizon : float
    level_sizes : dict, optional
        ``level -> number of marks``; defaults to ``n -> n``.
    """

    def __init__(self, values, rates, horizon=1.0, level_sizes=None):
        self.values = np.asarray(values, dtype=float)
        self.rates = np.asarray(rates, dtype=float)
        if self.values.shape != self.rates.shape:
            raise ValidationError("values and rates differ in length")
        self.horizon = float(horizon)
        self.level_sizes = None if level_sizes is None else {int(k): int(v) for k, v in level_sizes.items()}
        if self.level_sizes:
            keys = sorted(self.level_sizes)
            if any(self.level_sizes[a] > self.level_sizes[b] for a, b in zip(keys, keys[1:])):
                raise ValidationError("level mark sets must be increasing")

    @classmethod
    def geometric(cls, value_ratio=0.5, rate_ratio=1.5, horizon=1.0, max_level=40):
        """``z_k = value_ratio^k``, ``lambda_k = rate_ratio^k`` for ``k = 1..max_level``."""
        k = np.arange(1, max_level + 1)
        return cls(value_ratio**k, rate_ratio**k, horizon)

    def level_size(self, n):
        if self.level_sizes is None:
            return min(int(n), len(self.values))
        if n not in self.level_sizes:
            raise ValidationError(f"unknown level {n}")
        return self.level_sizes[n]

    def level_model(self, n, max_jumps=None):
        s = self.level_size(n)
        return CompoundPoissonModel.from_values(self.values[:s], self.rates[:s], self.horizon,
                                                max_jumps)

    def tail_variance(self, n):
        """``horizon * sum_{k > n} lambda_k z_k^2``."""
        s = self.level_size(n)
        return float(self.horizon * np.sum(self.rates[s:] * self.values[s:] ** 2))


@dataclass
class TruncationReport:
    levels: list
    initial_values: list
    residual_mse: list
    residual_se: list
    tail_variance: list
    gaps: list = field(default_factory=list)  # (n, m, value, std_error)
    cap_hits: int = 0
    num_paths: int = 0

    @property
    def gaps_decreasing(self):
        vals = [g[2] for g in self.gaps]
        return all(b < a for a, b in zip(vals, vals[1:]))

    @property
    def cauchy_within_band(self):
        """No gap exceeds its predecessor by more than 3 standard errors."""
        return all(b[2] <= a[2] + 3 * b[3] for a, b in zip(self.gaps, self.gaps[1:]))

    def rows(self):
        out = []
        for n, m0, r, se, tv in zip(self.levels, self.initial_values, self.residual_mse,
                                    self.residual_se, self.tail_variance):
            out.append({"level": n, "statistic": "initial_value", "value": m0, "std_error": 0.0})
            out.append({"level": n, "statistic": "residual_mse", "value": r, "std_error": se})
            out.append({"level": n, "statistic": "tail_variance", "value": tv, "std_error": 0.0})
        for n, m, g, se in self.gaps:
            out.append({"level": f"{n}-{m}", "statistic": "gap", "value": g, "std_error": se})
        return out


def _tail_statistic(family, first_tail, num_paths, seed, n_jobs):
    vals = family.values[first_tail:]
    lam = family.rates[first_tail:] * family.horizon
    if not len(vals):
        return np.zeros(num_paths)

    def block(rng, n, b):
        counts = rng.poisson(lam, size=(n, len(lam)))
        return (counts - lam) @ vals

    return np.concatenate(map_blocks(block, num_paths, seed, "truncation_tail", n_jobs))


def parochial_truncation_study(family, payoff, levels, num_paths=100_000, seed=0,
                               n_cells=128, n_jobs=1):
    """Integrands of nested truncations and their ``L^2(<mu~>)`` gaps.

    For each level ``n`` the payoff ``f`` is applied to the level-``n`` mark
    sum, compensated, and represented on the level-``n`` model. The residual
    ``f(X_T) - M_0^n - (H^n * mu~)_T`` is measured against the untruncated
    ``X_T``; gaps ``E[((H^n - H^m)^2 * <mu~>)_T]`` use consecutive levels.
    """
    levels = sorted(int(n) for n in levels)
    if not levels:
        raise ValidationError("no levels given")
    num_paths = check_positive_int(num_paths, "num_paths")
    top = levels[-1]
    top_model = family.level_model(top)
    batch = top_model.simulate(num_paths, seed, n_jobs=n_jobs)
    s_top = family.level_size(top)
    stat = MarkSumPayoff(lambda x: x, drift="compensated")
    x_full = stat(batch, top_model) + _tail_statistic(family, s_top, num_paths, seed, n_jobs)
    target = np.asarray(payoff.func(x_full), dtype=float)

    fields = {}
    for n in levels:
        model = family.level_model(n, max_jumps=top_model.max_jumps)
        f = MarkSumPayoff(payoff.func, drift="compensated", lattice_step=payoff.lattice_step)
        fields[n] = well_ordered_integrand(f, model)
    M = top_model.n_marks
    rep = TruncationReport(levels, [], [], [], [], cap_hits=batch.cap_hits, num_paths=num_paths)
    for n in levels:
        X, _ = frozen_integrals([lattice_component(fields[n], M)], batch, top_model.rates, n_cells)
        r2 = (target - fields[n].initial_value - X) ** 2
        mean, se = _mean_se(r2)
        rep.initial_values.append(fields[n].initial_value)
        rep.residual_mse.append(mean)
        rep.residual_se.append(se)
        rep.tail_variance.append(family.tail_variance(n))
    for n, m in zip(levels, levels[1:]):
        comps = [lattice_component(fields[n], M, 1.0), lattice_component(fields[m], M, -1.0)]
        _, Q = frozen_integrals(comps, batch, top_model.rates, n_cells)
        mean, se = _mean_se(Q)
        rep.gaps.append((n, m, mean, se))
    return rep


@dataclass
class ProjectionReport:
    labels: list
    representation_mse: list
    gaps_to_target: list
    gaps_consecutive: list
    std_errors: list = field(default_factory=list)

    @property
    def gaps_decreasing(self):
        g = self.gaps_to_target
        return all(b <= a for a, b in zip(g, g[1:]))


def l2_projection_convergence_test(payoff, model, approximations, num_paths=20_000, seed=0,
                                   n_cells=128, labels=None):
    """Represent simple approximants and measure integrand convergence.

    Monte Carlo form: ``model`` is a :class:`CompoundPoissonModel` and
    ``approximations`` a list of :class:`MarkSumPayoff`. Gaps are
    ``E[((H_a - H)^2 * <mu~>)_T]`` against the target's integrand.

    Discrete form: ``model`` is a :class:`DiscreteModel`; see
    :func:`discrete_projection_sequence`.
    """
    if isinstance(model, DiscreteModel):
        return discrete_projection_sequence(model, payoff, approximations)
    batch = model.simulate(num_paths, seed)
    M = model.n_marks
    H = well_ordered_integrand(payoff, model)
    fields = [well_ordered_integrand(a, model) for a in approximations]
    labels = labels or [getattr(a, "name", None) or str(i) for i, a in enumerate(approximations)]
    rep = ProjectionReport(list(labels), [], [], [])
    prev = None
    for a, F in zip(approximations, fields):
        X, _ = frozen_integrals([lattice_component(F, M)], batch, model.rates, n_cells)
        rep.representation_mse.append(float(np.mean((a(batch, model) - F.initial_value - X) ** 2)))
        _, Q = frozen_integrals([lattice_component(F, M), lattice_component(H, M, -1.0)],
                                batch, model.rates, n_cells)
        g, se = _mean_se(Q)
        rep.gaps_to_target.append(g)
        rep.std_errors.append(se)
        if prev is not None:
            _, Q2 = frozen_integrals([lattice_component(prev, M), lattice_component(F, M, -1.0)],
                                     batch, model.rates, n_cells)
            rep.gaps_consecutive.append(float(Q2.mean()))
        prev = F
    return rep


def enumerated_gap(field_a, field_b, model, grid_steps=1):
    """Exact ``E[((H_a - H_b)^2 * <mu~>)_T]`` on a discrete model."""
    from .jump_calculus import predictable_qv

    comp = model.compensator()
    D = field_a - field_b
    total = 0.0
    for prob, path in model.enumerate_paths():
        total += prob * predictable_qv(comp, path, grid_steps).integrate(D, model.horizon)
    return float(total)


def discrete_projection_sequence(model, payoff, steps=None):
    """Simple approximants over enumerated atoms, refined until exact.

    Leaves are ordered by decreasing probability; approximant ``n`` keeps the
    payoff on the first ``n`` leaves and is 0 elsewhere. Each approximant is
    represented with :func:`well_ordered_integrand` and compared with the
    payoff's own integrand by enumeration. The last approximant is the payoff.
    """
    leaves = sorted(model.leaves(), key=lambda lp: -lp[1])
    n_leaves = len(leaves)
    if steps is None:
        steps = sorted({min(2**i, n_leaves) for i in range(int(math.log2(max(n_leaves, 1))) + 2)})
    H = well_ordered_integrand(payoff, model)
    rep = ProjectionReport([], [], [], [])
    prev = None
    for n in steps:
        keep = {lp[0] for lp in leaves[:n]}

        def approx(o, keep=keep):
            return float(payoff(o)) if tuple(o) in keep else 0.0

        F = well_ordered_integrand(approx, model)
        rep.labels.append(f"{n} leaves")
        rep.representation_mse.append(0.0)
        rep.gaps_to_target.append(enumerated_gap(F, H, model))
        if prev is not None:
            rep.gaps_consecutive.append(enumerated_gap(prev, F, model))
        prev = F
    return rep


# -- estimator -------------------------------------------------------------


class WellOrderedRepresenter(TransformerMixin, BaseEstimator):
    """``fit(model, payoff)`` builds ``H``; ``transform(paths)`` returns ``M_0 + (H * mu~)_t``.

    Parameters
    ----------
    grid_steps : int
        Quadrature grid for the hazard part of pathwise integrals.
    """

    def __init__(self, grid_steps=256):
        self.grid_steps = grid_steps

    def fit(self, X, y=None):
        if y is None:
            raise ValidationError("fit expects the payoff as y")
        self.integrand_ = well_ordered_integrand(y, X)
        self.initial_value_ = self.integrand_.initial_value
        self.compensator_ = X.compensator()
        self.model_ = X
        return self

    def transform(self, X, times=None):
        check_is_fitted(self, "integrand_")
        steps = check_positive_int(self.grid_steps, "grid_steps")
        paths = [X] if isinstance(X, JumpPath) else X
        times = np.array([self.model_.horizon]) if times is None else check_time_array(times)
        out = np.empty((len(paths), len(times)))
        for i in range(len(paths)):
            path = paths[i]
            I = stochastic_integral(self.integrand_, path, self.compensator_, steps)
            out[i] = self.initial_value_ + I(times)
        return out
