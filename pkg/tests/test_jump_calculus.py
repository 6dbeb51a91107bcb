import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from jumprep import (
    CompoundPoissonModel,
    JumpLaw,
    JumpPath,
    MarkSpace,
    PredictableField,
    isometry_estimate,
    optional_qv,
    predictable_qv,
    qv_pushforward_check,
    stochastic_integral,
)
from jumprep.harness.discrete import DiscreteModel
from jumprep.measure_core import DeterministicCompensator, single_jump_compensator


def const(value, n_marks=1):
    return PredictableField.constant(value, n_marks)


def test_zero_field_gives_zero_path():
    comp = single_jump_compensator(JumpLaw.exponential(1.0, 1.0))
    X = stochastic_integral(const(0.0), JumpPath([0.4], [0], 1.0), comp)
    assert np.all(X(np.linspace(0, 1, 11)) == 0.0)


def test_compensated_single_jump_closed_form():
    # 1{t >= T} - min(t, T) for unit hazard
    comp = single_jump_compensator(JumpLaw.exponential(1.0, 1.0))
    X = stochastic_integral(const(1.0), JumpPath([0.7], [0], 1.0), comp)
    assert X(1.0) == pytest.approx(0.3, abs=1e-12)
    assert X(0.5) == pytest.approx(-0.5, abs=1e-12)


def atom_comp(mass):
    marks = MarkSpace.from_values([1.0])
    return DeterministicCompensator(marks, 1.0, atoms=[(0.5, 0, mass)])


def test_optional_qv_counts_events_without_atoms():
    comp = DeterministicCompensator(MarkSpace.from_values([1.0]), 1.0, rates=[1.0])
    qv = optional_qv(JumpPath([0.1, 0.2, 0.3], [0, 0, 0], 1.0), comp)
    assert qv.measure(0.5) == pytest.approx(3.0)


def test_optional_qv_atom_without_event():
    assert optional_qv(JumpPath([], [], 1.0), atom_comp(0.4)).measure(1.0) == pytest.approx(0.16)


def test_optional_qv_atom_with_event():
    assert optional_qv(JumpPath([0.5], [0], 1.0), atom_comp(0.4)).measure(1.0) == pytest.approx(0.36)


def test_predictable_qv_atomless_equals_compensator():
    comp = DeterministicCompensator(MarkSpace.from_values([1.0]), 1.0, rates=[2.0])
    assert predictable_qv(comp, JumpPath([], [], 1.0)).measure(0.5) == pytest.approx(1.0, abs=1e-12)


def test_predictable_qv_certain_atom_vanishes():
    assert predictable_qv(atom_comp(1.0), JumpPath([0.5], [0], 1.0)).measure(1.0) == pytest.approx(0.0)


def test_predictable_qv_bernoulli_slots():
    model = DiscreteModel(MarkSpace.from_values([1.0]), 3, np.full((3, 1), 0.3))
    qv = predictable_qv(model.compensator(), JumpPath([], [], 1.0))
    assert qv.measure(1.0) == pytest.approx(3 * 0.3 * 0.7, abs=1e-15)


@pytest.mark.parametrize("c", [1.0, 2.0])
def test_pushforward_constant_fields(c):
    comp = single_jump_compensator(JumpLaw.exponential(1.0, 1.0))
    path = JumpPath([0.6], [0], 1.0)
    rep = qv_pushforward_check(const(c), path, comp)
    assert rep.max_gap <= 1e-12
    X = stochastic_integral(const(c), path, comp)
    assert X.jump_sizes[0] ** 2 == pytest.approx(c**2 * optional_qv(path, comp).measure(1.0))


@given(st.integers(0, 2**31 - 1))
def test_pushforward_random_field_on_discrete_model(seed):
    model = DiscreteModel.random(seed, 4, 2)
    rng = np.random.default_rng(seed)
    table = rng.normal(size=(model.num_slots, 2))
    W = PredictableField(lambda t: table[np.clip(model.slot_of(t), 0, model.num_slots - 1)], 2)
    path = model.simulate(1, seed)[0]
    assert qv_pushforward_check(W, path, model.compensator(), grid_steps=2).max_gap <= 1e-10


def test_isometry_zero_field():
    model = CompoundPoissonModel.from_values([1.0], [1.0], 1.0)
    est = isometry_estimate(const(0.0), model, 200, seed=0)
    assert est.lhs == 0.0 and est.rhs == 0.0


def test_isometry_compensated_poisson():
    # Var(N_1 - 1) = 1
    model = CompoundPoissonModel.from_values([1.0], [1.0], 1.0)
    est = isometry_estimate(const(1.0), model, 20_000, seed=2)
    assert est.rhs == pytest.approx(1.0, abs=1e-10)
    assert abs(est.lhs - 1.0) <= 3 * est.lhs_se
    assert est.within(3.0)


def test_isometry_exact_on_discrete_model():
    model = DiscreteModel.random(4, 5, 2)
    W = PredictableField(lambda t: np.column_stack([np.sin(5 * t), t**2]), 2)
    est = isometry_estimate(W, model, exact=True, grid_steps=2)
    assert abs(est.diff) <= 1e-12


def test_single_jump_terminal_values_match_pathwise():
    from jumprep.jump_calculus import terminal_values

    marks = MarkSpace.from_values([1.0, 2.0])
    law = JumpLaw.from_atoms(marks, [(0.25, 0, 0.2), (0.5, 1, 0.3), (1.0, 1, 0.4)], 1.0)
    comp = single_jump_compensator(law)
    W = PredictableField(lambda t: np.column_stack([np.cos(t), 1 + t]), 2)
    batch = law.sample(200, seed=5)
    x, q = terminal_values(W, batch, comp)
    for i in range(0, 200, 20):
        p = batch[i]
        assert x[i] == pytest.approx(stochastic_integral(W, p, comp).terminal, abs=1e-12)
        assert q[i] == pytest.approx(predictable_qv(comp, p).integrate(W, 1.0), abs=1e-12)


def test_integral_rejects_unknown_mark():
    comp = single_jump_compensator(JumpLaw.exponential(1.0, 1.0))
    with pytest.raises(ValueError):
        stochastic_integral(const(1.0), JumpPath([0.5], [3], 1.0), comp)
