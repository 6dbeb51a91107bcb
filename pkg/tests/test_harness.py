import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from jumprep import (
    ConfigError,
    CompoundPoissonModel,
    MarkSpace,
    OracleSizeError,
    PredictableField,
    Scenario,
    emit_results,
    enumerate_oracle,
    isometry_estimate,
    parse_results,
    run_property_suite,
)
from jumprep.harness.cli import main
from jumprep.harness.discrete import NO_MARK, DiscreteModel
from jumprep.harness.emit import EmitError
from jumprep.harness.rng import map_blocks, stream
from jumprep.harness.scenario import bundled_scenarios, load_payoff


# -- rng ---------------------------------------------------------------------


def test_streams_depend_on_every_key_part():
    draws = {(s, t, b): stream(s, t, b).random() for s in (0, 1) for t in ("a", "b") for b in (0, 1)}
    assert len(set(draws.values())) == len(draws)
    assert stream(3, "a", 2).random() == stream(3, "a", 2).random()


def test_map_blocks_independent_of_workers():
    def f(rng, n, b):
        return rng.normal(size=n)

    a = np.concatenate(map_blocks(f, 10_000, 5, "x", n_jobs=1, block_size=1000))
    b = np.concatenate(map_blocks(f, 10_000, 5, "x", n_jobs=2, block_size=1000))
    assert np.array_equal(a, b)


# -- oracle --------------------------------------------------------------------


def test_bernoulli_oracle():
    model = DiscreteModel(MarkSpace.from_values([1.0]), 1, np.array([[0.5]]))
    oracle = enumerate_oracle(model, lambda o: float(o[0] != NO_MARK))
    assert oracle.initial == 0.5
    assert oracle.integrand[()][0] == 1.0
    assert oracle.qv[()][0, 0] == 0.25


def test_deterministic_payoff_zero_integrand():
    oracle = enumerate_oracle(DiscreteModel.random(1, 4, 2), lambda o: 2.0)
    assert all(np.all(v == 0) for v in oracle.integrand.values())


def test_six_slots_two_marks():
    model = DiscreteModel.random(7, 6, 2)
    assert sum(1 for _ in model.leaves()) == 3**6
    oracle = enumerate_oracle(model, lambda o: float(sum(z + 1 for z in o) ** 2))
    assert oracle.tower_gap() <= 1e-10


def test_oracle_size_bound():
    with pytest.raises(OracleSizeError):
        enumerate_oracle(DiscreteModel.random(0, 15, 2), lambda o: 0.0)


@given(st.integers(0, 2**31 - 1))
def test_tower_property_exact(seed):
    rng = np.random.default_rng(seed)
    model = DiscreteModel.random(seed, int(rng.integers(1, 6)), int(rng.integers(1, 4)))
    vals = {}

    def payoff(o):
        return vals.setdefault(o, float(rng.normal()))

    assert enumerate_oracle(model, payoff).tower_gap() <= 1e-10


# -- scenarios -------------------------------------------------------------------


def test_bundled_scenarios_load_and_build():
    for name in bundled_scenarios():
        sc = Scenario.load(name)
        assert sc.build() is not None


def test_unknown_field_rejected():
    raw = json.loads(json.dumps(Scenario.load("exponential").raw))
    raw["surprise"] = 1
    with pytest.raises(ConfigError):
        Scenario.from_dict(raw)


def test_schema_version_required():
    raw = dict(Scenario.load("exponential").raw)
    raw["schema_version"] = 99
    with pytest.raises(ConfigError):
        Scenario.from_dict(raw)


def test_unknown_mark_in_atoms():
    raw = json.loads(json.dumps(Scenario.load("atoms").raw))
    raw["model"]["atoms"][0][1] = "zzz"
    with pytest.raises(ConfigError):
        Scenario.from_dict(raw)


def test_seed_required():
    raw = dict(Scenario.load("exponential").raw)
    raw.pop("seed")
    with pytest.raises(ConfigError):
        Scenario.from_dict(raw).require_seed()


def test_payoff_kind_mismatch():
    with pytest.raises(ConfigError):
        load_payoff({"type": "mark_sum", "function": "identity"}, Scenario.load("exponential"))


# -- emit ------------------------------------------------------------------------


def test_empty_report_is_header_only():
    assert emit_results([], "csv") == "quantity,value,std_error\n"


def test_isometry_report_rows():
    model = CompoundPoissonModel.from_values([1.0], [1.0], 1.0)
    est = isometry_estimate(PredictableField.constant(1.0, 1), model, 500, seed=0)
    text = emit_results(est, "csv")
    lines = text.strip().split("\n")
    assert lines[0] == "quantity,value,std_error"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["lhs", "rhs"]


@given(st.lists(st.fixed_dictionaries({
    "check": st.text(min_size=1, max_size=8),
    "value": st.floats(allow_nan=False, allow_infinity=False),
    "status": st.sampled_from(["pass", "fail", "skip"]),
}), max_size=5))
def test_json_round_trip(rows):
    assert parse_results(emit_results(rows, "json"), "json") == rows


def test_emit_reports_path_on_failure(tmp_path):
    bad = tmp_path / "missing" / "out.csv"
    with pytest.raises(EmitError, match="missing"):
        emit_results([{"value": 1.0}], "csv", bad)


# -- suite -----------------------------------------------------------------------


def test_default_suite_on_exponential_passes():
    rep = run_property_suite("exponential", num_paths=5000)
    assert rep.passed
    assert {r["status"] for r in rep.rows()} == {"pass"}


def test_injected_integrand_fault_is_caught():
    rep = run_property_suite("exponential", num_paths=2000, inject="integrand")
    assert rep.status("representation_exactness") == "fail"


def test_zero_hazard_skips_undefined_checks():
    rep = run_property_suite("zero_hazard", num_paths=500)
    assert rep.passed
    assert rep.status("isometry_mc") == "skip"
    assert rep.status("representation_exactness") == "pass"


@pytest.mark.parametrize("name", ["exponential", "discrete", "compound_poisson"])
def test_each_check_fails_under_perturbation(name):
    base = run_property_suite(name, num_paths=2000)
    for row in base.rows():
        if row["status"] == "skip":
            continue
        delta = 10 * row["tolerance"] + 1.0
        rep = run_property_suite(name, suite=[row["check"]], num_paths=2000, perturb={row["check"]: delta})
        assert rep.status(row["check"]) == "fail", row["check"]


def test_rows_sorted_by_check():
    names = [r["check"] for r in run_property_suite("discrete").rows()]
    assert names == sorted(names)


def test_unknown_check_is_config_error():
    with pytest.raises(ConfigError):
        run_property_suite("discrete", suite=["no_such_check"])


# -- cli -------------------------------------------------------------------------


def test_cli_represent_csv(tmp_path, capsys):
    out = tmp_path / "g.csv"
    assert main(["represent", "--scenario", "exponential", "--grid", "4", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "t,mark,value"
    assert len(lines) == 1 + 4 * 2


def test_cli_verify_exit_codes(capsys):
    assert main(["verify", "--scenario", "zero_hazard"]) == 0
    assert main(["verify", "--scenario", "exponential", "--paths", "1000", "--inject", "integrand"]) == 1
    assert main(["verify", "--scenario", "does_not_exist"]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["verify"])
    assert exc.value.code == 2


def test_cli_gen_and_counterexample(capsys):
    assert main(["gen", "--scenario", "compound_poisson", "--paths", "3", "--format", "json"]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert all(set(r) == {"path", "time", "mark"} for r in rows)
    assert main(["counterexample", "--n", "1e3", "--h", "0.01", "--paths", "500", "--seed", "1"]) == 0
    assert capsys.readouterr().out.startswith("n,h,statistic,value,std_error")
    assert main(["counterexample", "--n", "1e3", "--h", "0.01", "--paths", "500"]) == 2


def test_cli_truncate_and_hedge(capsys):
    assert main(["truncate", "--scenario", "geometric_truncation", "--levels", "2,4", "--paths", "1000"]) == 0
    assert capsys.readouterr().out.startswith("level,statistic,value,std_error")
    assert main(["hedge", "--scenario", "joint", "--paths", "1000", "--steps", "16"]) == 0
    assert "replication_error_steps_16" in capsys.readouterr().out
