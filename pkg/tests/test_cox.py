import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from jumprep import conditional_mean_check, cox_counterexample_experiment
from jumprep.cox import (
    chebyshev_bound,
    exact_mean_factor,
    squared_exponent_factor,
    thinned_counts,
    window_integral,
)
from jumprep._validation import ValidationError


def test_frozen_zero_path_mean_is_one():
    c = conditional_mean_check(1000, 0.01, num_paths=20_000, seed=3, frozen="zero")
    assert c.exact == 1.0
    assert c.within(4.0)


def test_frozen_brownian_path_conditional_mean():
    c = conditional_mean_check(2000, 0.05, num_paths=20_000, seed=5)
    assert c.within(4.0)


def test_chebyshev_bound_value():
    # E[exp(W_t)] = exp(t / 2); n h eps^2 = 25
    assert chebyshev_bound(1.0, 1e4, 0.01, 0.5) == pytest.approx(math.exp(0.5) / 25)


def test_mean_factors_agree_to_second_order():
    h = 0.01
    assert exact_mean_factor(h) == pytest.approx(1 + h / 4, abs=1e-5)
    assert squared_exponent_factor(h) == pytest.approx(1 + h**2 / 6, abs=1e-8)


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(1e-3, 1.0))
def test_window_integral_of_linear_path(a, b, h):
    W = np.array([[a, b]])
    if abs(b - a) > 1e-8:
        exact = h * (math.exp(b) - math.exp(a)) / (b - a)
    else:
        exact = h * math.exp(a)
    assert window_integral(W, h)[0] == pytest.approx(exact, rel=1e-7)


def test_thinning_mean_count():
    rng = np.random.default_rng(0)
    W = np.tile(np.linspace(-0.5, 0.8, 21), (20_000, 1))
    dt = 0.1 / 20
    counts = thinned_counts(rng, W, dt, 500)
    exact = 500 * window_integral(W[:1], dt)[0]
    assert abs(counts.mean() - exact) <= 4 * counts.std(ddof=1) / math.sqrt(len(counts))


def test_experiment_bound_and_monotone_mse():
    rep = cox_counterexample_experiment([1e3, 1e4], [0.01], num_paths=4000, seed=2)
    assert rep.bound_holds(3.0)
    assert rep.mse_decreasing(0.01)
    stats = {r["statistic"] for r in rep.rows()}
    assert {"violation_rate", "chebyshev_bound", "mse", "expected_count"} <= stats


def test_small_expected_count_warns():
    with pytest.warns(RuntimeWarning):
        cox_counterexample_experiment([10.0], [0.01], num_paths=200, seed=0)


def test_window_beyond_horizon_rejected():
    with pytest.raises(ValidationError):
        cox_counterexample_experiment([1e3], [0.5], t=1.0, num_paths=100, seed=0, horizon=1.2)
