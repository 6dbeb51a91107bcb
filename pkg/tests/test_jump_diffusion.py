import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from jumprep import (
    BrownianRepresenter,
    CompoundPoissonModel,
    DiffusionSpec,
    DiscreteJointModel,
    JointModel,
    JointPayoff,
    JumpPath,
    MarkSumPayoff,
    TerminalPayoff,
    UnsupportedPayoffError,
    brownian_mrt_integrand,
    enumerate_oracle,
    product_representation,
    replication_study,
    simulate_joint,
    weak_representation,
)
from jumprep.jump_diffusion import ConstantFactor, JumpFactor

BROWNIAN = DiffusionSpec.brownian(1.0)
POISSON = CompoundPoissonModel.from_values([1.0], [1.0], 1.0)
T = np.array([0.1, 0.5, 0.9])
Y = np.array([0.2, -0.4, 1.0])


def test_identity_payoff_integrand_is_one():
    H = brownian_mrt_integrand(TerminalPayoff.identity(), BROWNIAN)
    assert np.allclose(H(0.3, Y), 1.0, atol=1e-10)


def test_square_payoff_integrand_is_two_y():
    H = brownian_mrt_integrand(TerminalPayoff.square_minus(1.0), BROWNIAN)
    assert np.allclose(H(0.3, Y), 2 * Y, atol=1e-10)
    assert H.initial_value == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("t", [0.0, 0.5, 0.9])
def test_digital_integrand_closed_form(t):
    H = brownian_mrt_integrand(TerminalPayoff.digital(0.0), BROWNIAN)
    s = math.sqrt(1 - t)
    ys = np.linspace(-4 * s, 4 * s, 33)
    exact = stats.norm.pdf(ys / s) / s
    assert np.max(np.abs(H(t, ys) - exact) / exact) <= 1e-6
    assert np.max(np.abs(H.gradient(t, ys) - exact) / exact) <= 1e-6


@given(st.floats(0.0, 0.95), st.floats(-3, 3))
def test_value_function_digital(t, y):
    H = brownian_mrt_integrand(TerminalPayoff.digital(0.0), BROWNIAN)
    assert H.value(t, np.array([y]))[0] == pytest.approx(stats.norm.cdf(y / math.sqrt(1 - t)), abs=1e-9)


def test_piecewise_variance_rate():
    spec = DiffusionSpec.piecewise([0.0, 0.5], [1.0, 3.0], 1.0)
    assert spec.remaining(0.25) == pytest.approx(0.25 + 1.5)
    H = brownian_mrt_integrand(TerminalPayoff.digital(0.0), spec)
    s = math.sqrt(1.75)
    assert H(0.25, np.array([0.3]))[0] == pytest.approx(stats.norm.pdf(0.3 / s) / s, rel=1e-6)


def test_degenerate_factors():
    cont = JumpFactor(MarkSumPayoff.count(), POISSON)
    H, G = product_representation(ConstantFactor(1.0), cont)
    path = JumpPath([0.3, 0.6], [0, 0], 1.0)
    assert np.all(H(T, Y, path) == 0.0)
    assert np.allclose(G(T, Y, path), 1.0)


def test_sum_payoff():
    m = JointModel(BROWNIAN, POISSON)
    pay = JointPayoff.product(TerminalPayoff.identity()) + JointPayoff.product(None, MarkSumPayoff.count())
    rep = weak_representation(pay, m)
    path = JumpPath([0.3, 0.6], [0, 0], 1.0)
    assert np.allclose(rep.H(T, Y, path), 1.0) and np.allclose(rep.G(T, Y, path), 1.0)
    assert rep.initial_value == pytest.approx(1.0, abs=1e-12)


def test_product_rule_payoff():
    m = JointModel(BROWNIAN, POISSON)
    pay = JointPayoff.product(TerminalPayoff.identity(), MarkSumPayoff(lambda x: x, drift="compensated"))
    rep = weak_representation(pay, m)
    path = JumpPath([0.3, 0.6], [0, 0], 1.0)
    assert np.allclose(rep.H(T, Y, path), np.array([0, 1, 2]) - T, atol=1e-10)
    assert np.allclose(rep.G(T, Y, path).ravel(), Y, atol=1e-10)


def test_discrete_joint_product_exact():
    dj = DiscreteJointModel(4, jump_probs=0.3)

    def f(o):
        y, n = dj.terminal(o)
        return float(y > 0) * float(n == 0)

    r = dj.product_representation(lambda y: float(y > 0), lambda n: float(n == 0))
    assert r.max_error(f) <= 1e-10


@given(st.integers(0, 2**31 - 1))
def test_discrete_joint_arbitrary_exact(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=2)
    dj = DiscreteJointModel(3, jump_probs=float(rng.uniform(0.05, 0.9)))

    def g(o):
        y, n = dj.terminal(o)
        return float(np.sin(a * y) * n + b * y**3)

    rep = weak_representation(g, dj)
    assert rep.max_error(g) <= 1e-10
    oracle = enumerate_oracle(dj.model, g)
    assert rep.initial_value == pytest.approx(oracle.initial, abs=1e-12)


def test_replication_within_three_se():
    m = JointModel(BROWNIAN, POISSON)
    pay = JointPayoff.product(TerminalPayoff.digital(0.0), MarkSumPayoff(lambda x: (np.asarray(x) == 0) * 1.0))
    rep = replication_study(pay, m, num_paths=20_000, seed=1, steps=(16, 64))
    err, se = rep.stats["replication_error_steps_64"]
    assert abs(err) <= 3 * se
    assert rep.initial_value == pytest.approx(0.5 * math.exp(-1), abs=1e-10)


def test_unsupported_payoff():
    with pytest.raises(UnsupportedPayoffError):
        weak_representation(lambda o: 1.0, JointModel(BROWNIAN, POISSON))


def test_simulated_diffusion_variance():
    paths = simulate_joint(JointModel(BROWNIAN, None), 20_000, seed=0, n_steps=8)
    yT = paths.Y[:, -1]
    assert abs(yT.var(ddof=1) - 1.0) <= 4 * math.sqrt(2 / len(yT))


def test_brownian_estimator():
    est = BrownianRepresenter().fit(BROWNIAN, TerminalPayoff.square_minus(1.0))
    rng = np.random.default_rng(0)
    Y = np.concatenate([np.zeros((2000, 1)), np.cumsum(rng.normal(0, math.sqrt(1 / 512), (2000, 512)), axis=1)], axis=1)
    err = est.transform(Y) - (Y[:, -1] ** 2 - 1)
    assert np.sqrt(np.mean(err**2)) < 0.1
