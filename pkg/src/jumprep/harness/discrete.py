"""Fully discrete jump models and the brute-force enumeration oracle.

A :class:`DiscreteModel` has ``K`` slots at times ``horizon * (k + 1) / K``.
In each slot at most one jump occurs, with per-mark probabilities that may
depend on the outcomes of earlier slots. Outcomes are encoded per slot as a
mark index or ``-1`` for "no jump".
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .._validation import OracleSizeError, ValidationError
from ..measure_core import MASS_TOL, NO_MARK, CompensatorSpec, JumpLaw, JumpPath, MarkSpace, PathBatch
from .rng import map_blocks

MAX_LEAVES = 10**7


class DiscreteModel:
    """Integer-valued random measure on a finite time grid.

    Parameters
    ----------
    marks : MarkSpace
    num_slots : int
    probs : array of shape (num_slots, n_marks) or callable ``(k, prefix) -> (n_marks,)``
        Jump probabilities per slot; ``prefix`` is the tuple of earlier outcomes.
    horizon : float
    """

    def __init__(self, marks, num_slots, probs, horizon=1.0, single_jump=False):
        self.marks = marks
        self.num_slots = int(num_slots)
        self.horizon = float(horizon)
        self.single_jump = bool(single_jump)
        if callable(probs):
            self._func = probs
            self.history_dependent = True
        else:
            table = np.asarray(probs, dtype=float).reshape(self.num_slots, len(marks))
            self._func = lambda k, prefix: table[k]
            self.history_dependent = False
        self._cache = {}
        self.slot_times = self.horizon * np.arange(1, self.num_slots + 1) / self.num_slots

    @property
    def n_marks(self):
        return len(self.marks)

    @property
    def n_leaves(self):
        return (self.n_marks + 1) ** self.num_slots

    def probs(self, k, prefix):
        """Per-mark jump probabilities in slot ``k`` given earlier outcomes."""
        key = (k, tuple(prefix))
        p = self._cache.get(key)
        if p is None:
            if self.single_jump and any(o != NO_MARK for o in prefix):
                p = np.zeros(self.n_marks)
            else:
                p = np.asarray(self._func(k, tuple(prefix)), dtype=float).reshape(self.n_marks)
            if np.any(p < -MASS_TOL) or p.sum() > 1 + MASS_TOL:
                raise ValidationError(f"slot {k}: jump probabilities {p} are not sub-stochastic")
            p = np.clip(p, 0.0, None)
            p.flags.writeable = False
            self._cache[key] = p
        return p

    def slot_of(self, t):
        k = np.rint(np.asarray(t, dtype=float) * self.num_slots / self.horizon - 1).astype(int)
        if np.any(k < 0) or np.any(k >= self.num_slots) or not np.allclose(
            self.slot_times[np.clip(k, 0, self.num_slots - 1)], t, rtol=0, atol=1e-9
        ):
            raise ValidationError(f"time(s) {t} are not slot times of the discrete model")
        return k

    def outcomes_of(self, path, upto=None):
        """Outcome tuple of slots ``< upto`` read off a path."""
        upto = self.num_slots if upto is None else upto
        out = [NO_MARK] * upto
        if len(path):
            ks = self.slot_of(path.times)
            for k, m in zip(ks, path.marks):
                if k < upto:
                    out[k] = int(m)
        return tuple(out)

    def path_from_outcomes(self, outcomes):
        times = [self.slot_times[k] for k, o in enumerate(outcomes) if o != NO_MARK]
        marks = [o for o in outcomes if o != NO_MARK]
        return JumpPath(times, marks, self.horizon)

    def compensator(self):
        return DiscreteCompensator(self)

    def leaves(self):
        """Yield ``(outcomes, probability)`` for every full outcome sequence."""
        if self.n_leaves > MAX_LEAVES:
            raise OracleSizeError(f"{self.n_leaves} leaves exceed the bound {MAX_LEAVES}")
        choices = [NO_MARK] + list(range(self.n_marks))

        def rec(prefix, prob):
            k = len(prefix)
            if k == self.num_slots:
                yield prefix, prob
                return
            p = self.probs(k, prefix)
            for o in choices:
                q = (1.0 - p.sum()) if o == NO_MARK else p[o]
                yield from rec(prefix + (o,), prob * q)

        yield from rec((), 1.0)

    def enumerate_paths(self):
        for outcomes, prob in self.leaves():
            if prob > 0:
                yield prob, self.path_from_outcomes(outcomes)

    def simulate(self, num_paths, seed, n_jobs=1):
        def block(rng, n, b):
            paths = []
            for _ in range(n):
                prefix = []
                for k in range(self.num_slots):
                    p = self.probs(k, prefix)
                    u = rng.random()
                    cum = np.cumsum(p)
                    j = int(np.searchsorted(cum, u, side="right"))
                    prefix.append(j if j < self.n_marks else NO_MARK)
                paths.append(self.path_from_outcomes(prefix))
            return PathBatch.from_paths(paths, self.horizon)

        return PathBatch.concat(map_blocks(block, num_paths, seed, "discrete", n_jobs))

    def single_jump_law(self):
        """Law of ``(T, Z)`` for a model that jumps at most once."""
        atoms = []
        survive = 1.0
        prefix = ()
        for k in range(self.num_slots):
            p = self.probs(k, prefix)
            for m in range(self.n_marks):
                if p[m] > 0 and survive > 0:
                    atoms.append((self.slot_times[k], m, survive * p[m]))
            survive *= 1.0 - p.sum()
            prefix = prefix + (NO_MARK,)
        return JumpLaw.from_atoms(self.marks, atoms, self.horizon,
                                  mass_at_infinity=max(survive, 0.0))

    def payoff_table(self, payoff):
        """For single-jump models: ``h(t_k, z)`` table and the no-jump value."""
        K, M = self.num_slots, self.n_marks
        table = np.zeros((K, M))
        for k in range(K):
            for m in range(M):
                out = [NO_MARK] * K
                out[k] = m
                table[k, m] = payoff(tuple(out))
        return table, float(payoff((NO_MARK,) * K))

    @classmethod
    def random(cls, seed, num_slots, n_marks, single_jump=False, history_dependent=True,
               certain_prob=0.1, horizon=1.0, mark_values=None):
        """Random model; probabilities are a deterministic function of ``(seed, k, prefix)``."""
        if mark_values is None:
            mark_values = np.arange(1, n_marks + 1, dtype=float)
        marks = MarkSpace.from_values(mark_values)

        def draw(k, prefix):
            key = [int(seed), k] + [o + 1 for o in (prefix if history_dependent else ())]
            rng = np.random.default_rng(np.random.SeedSequence(key))
            w = rng.dirichlet(np.ones(n_marks + 1))
            if rng.random() < certain_prob:
                w[0] = 0.0
                w /= w.sum()
            return w[1:]

        return cls(marks, num_slots, draw, horizon=horizon, single_jump=single_jump)


class DiscreteCompensator(CompensatorSpec):
    """Atomic compensator: mass ``p(k, z | earlier outcomes)`` at each slot time."""

    history_dependent = True
    has_density = False

    def __init__(self, model):
        super().__init__(model.marks, model.horizon)
        self.model = model

    def atoms(self, path=None):
        model = self.model
        outcomes = model.outcomes_of(path) if path is not None else (NO_MARK,) * model.num_slots
        masses = np.array([model.probs(k, outcomes[:k]) for k in range(model.num_slots)])
        return model.slot_times, masses.reshape(model.num_slots, model.n_marks)


@dataclass
class OracleResult:
    """Exact conditional expectations and representation data on the outcome tree."""

    model: DiscreteModel
    values: dict
    reach: dict
    compensator: dict = field(default_factory=dict)
    integrand: dict = field(default_factory=dict)
    qv: dict = field(default_factory=dict)

    @property
    def initial(self):
        return self.values[()]

    def martingale(self, outcomes):
        """``[M_0, M_{t_1}, ..., M_{t_K}]`` along an outcome sequence."""
        return np.array([self.values[tuple(outcomes[:k])] for k in range(len(outcomes) + 1)])

    def tower_gap(self):
        gap = 0.0
        for prefix, p in self.compensator.items():
            kids = sum(p[m] * self.values[prefix + (m,)] for m in range(len(p)))
            kids += (1.0 - p.sum()) * self.values[prefix + (NO_MARK,)]
            gap = max(gap, abs(kids - self.values[prefix]))
        return gap


def enumerate_oracle(model, payoff):
    """Brute-force conditional expectations over every outcome sequence.

    ``payoff`` maps a full outcome tuple to a real number. At each node the
    integrand is ``M(prefix + z) - M(prefix + none)`` and the predictable
    quadratic variation atom is ``diag(p) - p p^T``.
    """
    if model.n_leaves > MAX_LEAVES:
        raise OracleSizeError(f"{model.n_leaves} leaves exceed the bound {MAX_LEAVES}")
    K, M = model.num_slots, model.n_marks
    choices = [NO_MARK] + list(range(M))
    values, reach = {}, {(): 1.0}
    comp, integrand, qv = {}, {}, {}
    for k in range(K):
        for prefix in itertools.product(choices, repeat=k):
            p = model.probs(k, prefix)
            comp[prefix] = p
            r = reach[prefix]
            reach[prefix + (NO_MARK,)] = r * (1.0 - p.sum())
            for m in range(M):
                reach[prefix + (m,)] = r * p[m]
    for leaf in itertools.product(choices, repeat=K):
        values[leaf] = float(payoff(leaf))
    for k in range(K - 1, -1, -1):
        for prefix in itertools.product(choices, repeat=k):
            p = comp[prefix]
            none = values[prefix + (NO_MARK,)]
            kids = np.array([values[prefix + (m,)] for m in range(M)])
            values[prefix] = float(p @ kids + (1.0 - p.sum()) * none)
            integrand[prefix] = kids - none
            qv[prefix] = np.diag(p) - np.outer(p, p)
    return OracleResult(model, values, reach, comp, integrand, qv)
