import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from jumprep import (
    CompoundPoissonModel,
    JumpPath,
    MarkSumPayoff,
    TruncationFamily,
    WellOrderedRepresenter,
    discrete_projection_sequence,
    enumerate_oracle,
    l2_projection_convergence_test,
    parochial_truncation_study,
    stochastic_integral,
    well_ordered_integrand,
)
from jumprep.harness.discrete import DiscreteModel
from jumprep.multi_jump import (
    default_cap,
    frozen_integrals,
    grid_states,
    lattice_component,
    markov_lattice,
    poisson_cutoff,
    tail_bound,
)


def plus_minus(rate=1.0):
    return CompoundPoissonModel.from_values([1.0, -1.0], [rate / 2, rate / 2], 1.0)


def test_zero_hazard_paths_are_empty():
    model = CompoundPoissonModel.from_values([1.0], [0.0], 1.0)
    assert model.simulate(50, seed=0).counts.sum() == 0


def test_poisson_mean_count():
    b = CompoundPoissonModel.from_values([1.0], [1.0], 1.0).simulate(20_000, seed=4)
    c = b.counts
    assert abs(c.mean() - 1.0) <= 4 * c.std(ddof=1) / math.sqrt(len(c))


def test_constant_payoff_has_zero_integrand():
    model = plus_minus()
    H = well_ordered_integrand(MarkSumPayoff(lambda x: np.full(np.shape(x), 3.0)), model)
    path = JumpPath([0.2, 0.7], [0, 1], 1.0)
    assert np.max(np.abs(H(np.linspace(0, 1, 11), path))) <= 1e-12
    assert H.initial_value == pytest.approx(3.0)


def test_count_payoff_integrand_is_one():
    # M_t = N_t + (1 - t)
    model = plus_minus()
    H = well_ordered_integrand(MarkSumPayoff.count(), model)
    for path in model.simulate(30, seed=1):
        assert np.max(np.abs(H(np.linspace(0, 1, 21), path) - 1.0)) <= 1e-8
    assert H.initial_value == pytest.approx(1.0, abs=1e-12)
    path = JumpPath([0.3], [1], 1.0)
    assert H.value([0.5], path)[0] == pytest.approx(1 + 0.5, abs=1e-12)


def test_interval_integrand_matches_markov_field():
    model = plus_minus(2.0)
    payoff = MarkSumPayoff(lambda x: (np.asarray(x) > 0).astype(float), drift="compensated")
    H = well_ordered_integrand(payoff, model)
    hist = JumpPath([0.3], [0], 1.0)
    g = H.interval_integrand(hist)
    t = np.linspace(0.301, 1.0, 40)
    assert np.max(np.abs(g(t) - H(t, hist))) <= 1e-8


@given(st.integers(0, 2**31 - 1))
def test_discrete_arbitrary_payoff_exact(seed):
    rng = np.random.default_rng(seed)
    K, M = int(rng.integers(1, 6)), int(rng.integers(1, 3))
    model = DiscreteModel.random(seed, K, M)
    coef = rng.normal(size=K)

    def payoff(o):
        return float(np.sin(sum(c * (z + 2) for c, z in zip(coef, o))))

    oracle = enumerate_oracle(model, payoff)
    H = well_ordered_integrand(payoff, model)
    comp = model.compensator()
    knots = np.concatenate([[0.0], model.slot_times])
    for prob, path in model.enumerate_paths():
        X = stochastic_integral(H, path, comp, grid_steps=2)
        assert np.max(np.abs(H.initial_value + X(knots) - oracle.martingale(model.outcomes_of(path)))) <= 1e-10


def test_cap_hits_are_rare():
    model = plus_minus(1.0)
    b = model.simulate(20_000, seed=3)
    assert b.cap_hits / len(b) < 1e-3
    assert tail_bound(1.0, 1.0, model.max_jumps) < 1e-9


def test_poisson_cutoff_tail():
    from scipy import stats

    n = poisson_cutoff(3.0, 1e-12)
    assert stats.poisson.sf(n, 3.0) <= 1e-12 < stats.poisson.sf(n - 2, 3.0)
    assert default_cap(0.0, 1.0) >= 0


def test_lattice_values_against_poisson_sum():
    # E[N_T^2 | N_t = k] = (k + r)^2 + r with r = rate (T - t)
    model = CompoundPoissonModel.from_values([1.0], [1.3], 1.0)
    lat = markov_lattice(model, MarkSumPayoff(lambda x: np.asarray(x, float) ** 2))
    t, k = np.array([0.0, 0.4, 0.9]), np.array([0, 2, 5])
    r = 1.3 * (1 - t)
    assert np.allclose(lat.value(t, k), (k + r) ** 2 + r, atol=1e-10)


def test_grid_states_counts():
    model = plus_minus()
    b = model.simulate(100, seed=2)
    comp = lattice_component(well_ordered_integrand(MarkSumPayoff(lambda x: x), model), 2)
    states = grid_states(b, comp.jumps, [0.5, 1.0])
    for i in range(len(b)):
        p = b[i]
        up = [np.sum((p.times <= t) & (p.marks == 0)) - np.sum((p.times <= t) & (p.marks == 1)) for t in (0.5, 1.0)]
        assert list(states[i]) == up


def test_frozen_integrals_replicate_in_mean():
    model = plus_minus(2.0)
    payoff = MarkSumPayoff(lambda x: (np.asarray(x) > 0).astype(float), drift="compensated")
    H = well_ordered_integrand(payoff, model)
    b = model.simulate(20_000, seed=1)
    X, Q = frozen_integrals([lattice_component(H, 2)], b, model.rates, n_cells=64)
    R = payoff(b, model) - H.initial_value - X
    assert abs(R.mean()) <= 3 * R.std(ddof=1) / math.sqrt(len(R))
    d = X**2 - Q
    assert abs(d.mean()) <= 3 * d.std(ddof=1) / math.sqrt(len(d))


def test_finite_family_has_zero_gaps():
    fam = TruncationFamily([1.0, 0.5], [1.0, 1.0], 1.0, level_sizes={1: 2, 2: 2})
    rep = parochial_truncation_study(fam, MarkSumPayoff(lambda x: x, drift="compensated"), [1, 2],
                                     num_paths=2000, seed=0, n_cells=16)
    assert all(abs(g[2]) <= 1e-12 for g in rep.gaps)


def test_geometric_tail_variance():
    fam = TruncationFamily.geometric()
    for n in (2, 4, 6):
        assert fam.tail_variance(n) == pytest.approx(0.375 ** (n + 1) / (1 - 0.375), rel=1e-6)


def test_clipped_approximants_converge():
    model = CompoundPoissonModel.from_values([1.0, -1.0], [1.5, 1.5], 1.0)
    target = MarkSumPayoff(lambda x: x)
    approx = [MarkSumPayoff(lambda x, L=L: np.clip(x, -L, L), name=f"clip{L}") for L in (1, 2, 4, 8)]
    rep = l2_projection_convergence_test(target, model, approx, num_paths=5000, seed=0, n_cells=32)
    assert rep.gaps_decreasing


def test_discrete_projection_reaches_zero():
    model = DiscreteModel.random(2, 3, 2)
    rep = discrete_projection_sequence(model, lambda o: float(sum(z + 1 for z in o)))
    assert rep.gaps_to_target[-1] <= 1e-12
    assert rep.labels[-1] == "27 leaves"


def test_estimator_round_trip():
    model = plus_minus()
    est = WellOrderedRepresenter(grid_steps=64).fit(model, MarkSumPayoff.count())
    paths = model.simulate(5, seed=9)
    out = est.transform(paths)
    assert np.allclose(out[:, 0], paths.counts, atol=1e-10)
