import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from jumprep import JumpLaw, JumpPath, MarkSpace, PathBatch, ValidationError, validate_path
from jumprep.measure_core import DeterministicCompensator, single_jump_compensator
from jumprep.harness.discrete import DiscreteModel


def one_mark():
    return MarkSpace.from_values([1.0])


def test_survival_at_start_is_one():
    law = JumpLaw.exponential(2.0, 1.0)
    assert law.survival([0.0])[0] == 1.0


def test_exponential_survival_at_log_two():
    # closed form F_t = exp(-t)
    law = JumpLaw.exponential(1.0, 2.0)
    assert law.survival([math.log(2)])[0] == pytest.approx(0.5, abs=1e-12)


def test_deterministic_atom_survival():
    law = JumpLaw.from_atoms(one_mark(), [(2.0, 0, 1.0)], 3.0)
    assert list(law.survival([1.0, 1.999, 2.0, 2.5])) == [1.0, 1.0, 0.0, 0.0]
    assert law.survival_left([2.0])[0] == 1.0


def test_mark_space_rejects_duplicates_and_sentinel():
    with pytest.raises(ValidationError):
        MarkSpace(("a", "a"), (1.0, 2.0))
    with pytest.raises(ValidationError):
        MarkSpace(("none",), (1.0,))


@pytest.mark.parametrize(
    "times, marks, kind",
    [
        ([], [], None),
        ([0.3, 0.3], [0, 1], "duplicate_time"),
        ([0.2, 0.9], [0, 1], None),
        ([0.5, 0.2], [0, 0], "unordered"),
        ([1.5], [0], "beyond_horizon"),
    ],
)
def test_validate_path(times, marks, kind):
    path = JumpPath.__new__(JumpPath)
    path.times = np.asarray(times, float)
    path.marks = np.asarray(marks, int)
    path.horizon, path.start = 1.0, 0.0
    check = validate_path(path, n_marks=2)
    assert check.ok == (kind is None)
    assert check.kind == kind


def test_exponential_hazard_is_constant():
    comp = single_jump_compensator(JumpLaw.exponential(1.7, 1.0))
    assert np.allclose(comp.hazard(np.linspace(0, 1, 11)), 1.7, atol=1e-12)


def test_uniform_hazard():
    # density 1 over survival 1 - s
    comp = single_jump_compensator(JumpLaw.uniform(0.0, 1.0, 1.0))
    s = np.array([0.1, 0.5, 0.9])
    assert np.allclose(comp.hazard(s)[:, 0], 1.0 / (1.0 - s), rtol=1e-10)


def test_certain_atom_compensator():
    comp = single_jump_compensator(JumpLaw.from_atoms(one_mark(), [(0.4, 0, 1.0)], 1.0))
    times, masses = comp.atoms()
    assert list(times) == [0.4]
    assert masses[0, 0] == pytest.approx(1.0)


def test_compensator_stops_at_the_jump():
    comp = single_jump_compensator(JumpLaw.exponential(1.0, 1.0))
    path = JumpPath([0.5], [0], 1.0)
    d = comp.density([0.2, 0.7], path)
    assert d[0, 0] == pytest.approx(1.0) and d[1, 0] == 0.0


@given(st.floats(0.1, 5.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_survival_matches_law_mass(rate, a, b):
    law = JumpLaw.exponential(rate, 1.0)
    lo, hi = sorted((a, b))
    F = law.survival([lo, hi])
    mass = law.integral(lambda s: np.ones((len(s), 1))).upto([hi])[0] - law.integral(
        lambda s: np.ones((len(s), 1))).upto([lo])[0]
    assert F[0] - F[1] == pytest.approx(mass, abs=1e-12)


@given(st.integers(0, 10_000), st.floats(0.05, 0.95))
def test_hazard_is_predictable(seed, t):
    # perturbing the path after t never changes the hazard at or before t
    model = DiscreteModel.random(seed, 4, 2)
    comp = model.compensator()
    rng = np.random.default_rng(seed)
    base = JumpPath([], [], 1.0)
    later = [s for s in model.slot_times if s > t]
    if not later:
        return
    other = JumpPath([later[0]], [int(rng.integers(2))], 1.0)
    ta, ma = comp.atoms(base)
    tb, mb = comp.atoms(other)
    keep = ta <= t
    assert np.array_equal(ma[keep], mb[tb <= t])


def test_sampled_single_jump_law_matches_nu():
    law = JumpLaw.exponential(1.0, 1.0, [0.3, 0.7])
    batch = law.sample(40_000, seed=3)
    T, Z = batch.first_times, batch.first_marks
    edges = [0.0, 0.25, 0.5, 0.75, 1.0]
    for z, p in enumerate([0.3, 0.7]):
        for lo, hi in zip(edges, edges[1:]):
            q = p * (math.exp(-lo) - math.exp(-hi))
            freq = np.mean((T > lo) & (T <= hi) & (Z == z))
            assert abs(freq - q) <= 4 * math.sqrt(q * (1 - q) / len(T))
    assert abs(np.mean(~np.isfinite(T)) - math.exp(-1)) <= 4 * math.sqrt(0.25 / len(T))


def test_sampled_atom_frequencies():
    marks = MarkSpace.from_values([1.0, 2.0])
    law = JumpLaw.from_atoms(marks, [(0.25, 0, 0.2), (0.5, 1, 0.5)], 1.0)
    batch = law.sample(20_000, seed=1)
    T, Z = batch.first_times, batch.first_marks
    for t, z, p in [(0.25, 0, 0.2), (0.5, 1, 0.5)]:
        freq = np.mean((T == t) & (Z == z))
        assert abs(freq - p) <= 4 * math.sqrt(p * (1 - p) / len(T))


def test_path_batch_block_rebases():
    paths = [JumpPath([0.1], [0], 1.0), JumpPath([], [], 1.0), JumpPath([0.2, 0.3], [0, 0], 1.0)]
    b = PathBatch.from_paths(paths, 1.0).block(1, 3)
    assert len(b) == 2 and b[1] == paths[2] and len(b[0]) == 0


def test_deterministic_compensator_rates():
    comp = DeterministicCompensator(MarkSpace.from_values([1.0, -1.0]), 1.0, rates=[0.5, 1.5])
    assert np.allclose(comp.density([0.3]), [[0.5, 1.5]])
