"""Property-suite runner: invariant checks per scenario kind.

Each check yields ``{check, status, value, tolerance}`` with status ``pass``,
``fail`` or ``skip`` (the quantity is undefined for the scenario, e.g. a
variance ratio when nothing can jump). Rows are ordered by check name.

Fault injection: ``inject="integrand"`` adds 0.1 to every integrand under
test; ``perturb={check: delta}`` shifts a measured quantity before it is
compared, so each comparison can be shown to trip.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .._validation import OracleSizeError, ValidationError
from .scenario import ConfigError, Scenario, default_payoff, load_payoff

DEFAULT_TOLERANCES = {
    "exact": 1e-10,
    "quadrature": 1e-8,
    "n_se": 3.0,
    "n_se_loose": 4.0,
    "gradient": 1e-6,
    "cap_fraction": 1e-3,
}
INJECTED_SHIFT = 0.1
PATHWISE_PATHS = 100
MC_PATHS = 20_000
SE_FLOOR = 1e-12  # identities that hold per path have zero spread up to rounding


@dataclass
class CheckResult:
    check: str
    status: str
    value: float
    tolerance: float

    def row(self):
        return {"check": self.check, "status": self.status, "value": float(self.value),
                "tolerance": float(self.tolerance)}


@dataclass
class SuiteReport:
    results: list = field(default_factory=list)

    def rows(self):
        return [r.row() for r in sorted(self.results, key=lambda r: r.check)]

    @property
    def failed(self):
        return [r.check for r in self.results if r.status == "fail"]

    @property
    def passed(self):
        return not self.failed

    def status(self, check):
        for r in self.results:
            if r.check == check:
                return r.status
        raise KeyError(check)


@dataclass
class _Context:
    scenario: Scenario
    model: object
    payoff: object
    seed: int
    num_paths: int
    tol: dict
    inject: str | None
    perturb: dict
    n_jobs: int

    def shift(self):
        return INJECTED_SHIFT if self.inject == "integrand" else 0.0


def _upper(ctx, name, value, tol):
    """Pass when ``value <= tol``."""
    value = float(value) + ctx.perturb.get(name, 0.0)
    return CheckResult(name, "pass" if value <= tol else "fail", value, tol)


def _within_se(ctx, name, diff, se, n_se):
    """Pass when ``|diff| <= n_se * se``; skip when the estimate has no spread."""
    diff = float(diff) + ctx.perturb.get(name, 0.0)
    if se == 0 and diff == 0 and name not in ctx.perturb:
        return CheckResult(name, "skip", 0.0, 0.0)
    tol = n_se * se + SE_FLOOR
    return CheckResult(name, "pass" if abs(diff) <= tol else "fail", abs(diff), tol)


# -- single jump ---------------------------------------------------------------


class _SingleJumpScenario:
    def __init__(self, law):
        from ..measure_core import single_jump_compensator

        self.law = law
        self.comp = single_jump_compensator(law)

    def compensator(self):
        return self.comp

    def simulate(self, num_paths, seed, n_jobs=1):
        return self.law.sample(num_paths, seed, n_jobs)


def _single_jump_checks(ctx):
    from ..jump_calculus import isometry_estimate, qv_pushforward_check, stochastic_integral, terminal_values
    from ..single_jump import chou_meyer_integrand, conditional_expectation_path, integrability_bound_check

    law, h = ctx.model, ctx.payoff
    g = chou_meyer_integrand(h, law)
    W = g + ctx.shift() if ctx.inject else g
    adapter = _SingleJumpScenario(g.law)
    comp = adapter.comp
    out = []

    paths = g.law.sample(PATHWISE_PATHS, ctx.seed)
    times = np.linspace(g.law.start, g.law.horizon, 9)
    worst = qv = 0.0
    for i in range(len(paths)):
        path = paths[i]
        X = stochastic_integral(W, path, comp)
        exact = conditional_expectation_path(h, g.law, path, times)
        worst = max(worst, float(np.max(np.abs(g.initial_value + X(times) - exact(times)))))
        if i < 20:
            qv = max(qv, qv_pushforward_check(W, path, comp).max_gap)
    out.append(_upper(ctx, "representation_exactness", worst, ctx.tol["quadrature"]))
    out.append(_upper(ctx, "qv_identities", qv, ctx.tol["exact"]))

    batch = adapter.simulate(ctx.num_paths, ctx.seed, ctx.n_jobs)
    T, Z = batch.first_times, batch.first_marks
    hT = np.full(len(batch), h.at_infinity)
    hit = np.isfinite(T)
    if hit.any():
        hT[hit] = h(T[hit])[np.arange(hit.sum()), Z[hit]]
    mean = float(hT.mean())
    se = float(hT.std(ddof=1) / math.sqrt(len(hT)))
    out.append(_within_se(ctx, "initial_value_mc", mean - g.initial_value, se, ctx.tol["n_se"]))

    x, _ = terminal_values(W, batch, comp)
    xse = float(x.std(ddof=1) / math.sqrt(len(x)))
    out.append(_within_se(ctx, "martingale_mean", float(x.mean()), xse, ctx.tol["n_se"]))

    est = isometry_estimate(W, adapter, ctx.num_paths, ctx.seed, n_jobs=ctx.n_jobs)
    out.append(_within_se(ctx, "isometry_mc", est.diff, est.diff_se, ctx.tol["n_se"]))

    grid = np.linspace(g.law.start, g.law.horizon, 17)
    grid = grid[g.law.survival(grid) > 0]
    excess = max((integrability_bound_check(h, g.law, t)["lhs"] - integrability_bound_check(h, g.law, t)["rhs"]
                  for t in grid), default=0.0)
    out.append(_upper(ctx, "integrability_bound", excess, ctx.tol["exact"]))
    return out


# -- compound Poisson ---------------------------------------------------------


def _multi_jump_checks(ctx):
    from ..jump_calculus import _mean_se, stochastic_integral
    from ..multi_jump import frozen_integrals, lattice_component, well_ordered_integrand

    model, payoff = ctx.model, ctx.payoff
    field_ = well_ordered_integrand(payoff, model)
    W = field_ + ctx.shift() if ctx.inject else field_
    comp = model.compensator()
    out = []

    paths = model.simulate(20, ctx.seed)
    times = np.linspace(0.0, model.horizon, 9)
    worst = literal = 0.0
    for i in range(len(paths)):
        path = paths[i]
        X = stochastic_integral(W, path, comp)
        exact = field_.value(times, path)
        worst = max(worst, float(np.max(np.abs(field_.initial_value + X(times) - exact))))
        if i < 5:
            hist = path.truncated(path.times[0]) if len(path) else path
            start = float(hist.times[-1]) if len(hist) else 0.0
            tt = np.linspace(start, model.horizon, 12)[1:]
            g = field_.interval_integrand(hist)
            literal = max(literal, float(np.max(np.abs(g(tt) - W(tt, hist)))))
    out.append(_upper(ctx, "representation_exactness", worst, ctx.tol["quadrature"]))
    out.append(_upper(ctx, "interval_consistency", literal, ctx.tol["quadrature"]))

    batch = model.simulate(ctx.num_paths, ctx.seed, ctx.n_jobs)
    comp_ = lattice_component(field_, model.n_marks)
    X, Q = frozen_integrals([comp_], batch, model.rates, n_cells=128)
    R = payoff(batch, model) - field_.initial_value - X
    mean, se = _mean_se(R)
    out.append(_within_se(ctx, "replication_mc", mean, se, ctx.tol["n_se"]))
    d, dse = _mean_se(X**2 - Q)
    out.append(_within_se(ctx, "isometry_mc", d, dse, ctx.tol["n_se"]))
    out.append(_upper(ctx, "cap_hit_fraction", batch.cap_hits / len(batch), ctx.tol["cap_fraction"]))
    return out


# -- discrete ------------------------------------------------------------------


def _discrete_checks(ctx):
    from ..harness.discrete import enumerate_oracle
    from ..jump_calculus import isometry_estimate, qv_pushforward_check, stochastic_integral
    from ..measure_core import single_jump_compensator
    from ..multi_jump import well_ordered_integrand
    from ..single_jump import PayoffFunctional, chou_meyer_integrand

    model, payoff = ctx.model, ctx.payoff
    try:
        oracle = enumerate_oracle(model, payoff)
    except OracleSizeError:
        return [CheckResult("oracle_tower", "skip", 0.0, 0.0)]
    out = [_upper(ctx, "oracle_tower", oracle.tower_gap(), ctx.tol["exact"])]
    field_ = well_ordered_integrand(payoff, model)
    W = field_ + ctx.shift() if ctx.inject else field_
    comp = model.compensator()
    knots = np.concatenate([[0.0], model.slot_times])
    worst = qv = 0.0
    for i, (prob, path) in enumerate(model.enumerate_paths()):
        X = stochastic_integral(W, path, comp, grid_steps=2)
        rep = field_.initial_value + X(knots)
        worst = max(worst, float(np.max(np.abs(rep - oracle.martingale(model.outcomes_of(path))))))
        if i < 200:
            qv = max(qv, qv_pushforward_check(W, path, comp, grid_steps=2).max_gap)
    out.append(_upper(ctx, "representation_exactness", worst, ctx.tol["exact"]))
    out.append(_upper(ctx, "qv_identities", qv, ctx.tol["exact"]))

    est = isometry_estimate(W, model, exact=True, grid_steps=2)
    out.append(_upper(ctx, "isometry_exact", abs(est.diff), ctx.tol["exact"] * max(1.0, abs(est.lhs))))

    if model.single_jump:
        table, h_inf = model.payoff_table(payoff)
        h = PayoffFunctional.from_table(model.slot_times, table, h_inf)
        law = model.single_jump_law()
        g = chou_meyer_integrand(h, law)
        Wg = g + ctx.shift() if ctx.inject else g
        sc = single_jump_compensator(g.law)
        worst = 0.0
        for prob, path in model.enumerate_paths():
            X = stochastic_integral(Wg, path, sc, grid_steps=4)
            rep = g.initial_value + X(knots)
            worst = max(worst, float(np.max(np.abs(rep - oracle.martingale(model.outcomes_of(path))))))
        out.append(_upper(ctx, "single_jump_exactness", worst, ctx.tol["exact"]))
    return out


# -- truncation, Cox, joint ------------------------------------------------------


def _truncation_checks(ctx):
    from ..multi_jump import parochial_truncation_study

    fam, payoff = ctx.model, ctx.payoff
    levels = [2, 4]
    rep = parochial_truncation_study(fam, payoff, levels, num_paths=ctx.num_paths, seed=ctx.seed,
                                     n_cells=32, n_jobs=ctx.n_jobs)
    out = []
    linear = payoff.name == "identity"
    for n, r, se, tv in zip(rep.levels, rep.residual_mse, rep.residual_se, rep.tail_variance):
        if linear:
            out.append(_within_se(ctx, f"residual_vs_tail_level_{n}", r - tv, se, ctx.tol["n_se"]))
    out.append(_upper(ctx, "cap_hit_fraction", rep.cap_hits / rep.num_paths, ctx.tol["cap_fraction"]))
    if not linear:
        rise = max((b[2] - a[2] - ctx.tol["n_se"] * b[3] for a, b in zip(rep.gaps, rep.gaps[1:])),
                   default=-1.0)
        out.append(_upper(ctx, "gaps_cauchy", rise, 0.0))
    return out


def _cox_checks(ctx):
    from ..cox import conditional_mean_check, cox_counterexample_experiment

    p = ctx.model
    n, h = p["n"][-1], p["h"][-1]
    out = []
    for name, frozen in (("conditional_mean_zero_path", "zero"), ("conditional_mean_frozen_path", None)):
        c = conditional_mean_check(n, h, p["t"], num_paths=ctx.num_paths, seed=ctx.seed, frozen=frozen)
        out.append(_within_se(ctx, name, c.mean - c.exact, c.std_error, ctx.tol["n_se_loose"]))
    rep = cox_counterexample_experiment([n], [h], p["t"], ctx.num_paths, p["eps"], ctx.seed,
                                        n_jobs=ctx.n_jobs)
    rate, se = rep.get(n, h, "violation_rate")
    bound = rep.get(n, h, "chebyshev_bound")[0]
    out.append(_upper(ctx, "chebyshev_bound", rate - ctx.tol["n_se"] * se, bound))
    return out


def _joint_checks(ctx):
    from ..jump_diffusion import ContinuousFactor, replication_study, weak_representation

    model, payoff = ctx.model, ctx.payoff
    rep = weak_representation(payoff, model)
    out = []
    worst = 0.0
    for tm in rep.terms:
        if isinstance(tm.cont, ContinuousFactor):
            bi = tm.cont.integrand
            for t in np.array([0.0, 0.25, 0.5, 0.75]) * model.horizon:
                s = bi.sigma(t)
                if s == 0:
                    continue
                centers = list(tm.cont.payoff.breakpoints) or [model.y0]
                ys = np.concatenate([c + s * np.linspace(-4, 4, 17) for c in centers])
                worst = max(worst, bi.gradient_check([t], ys))
    out.append(_upper(ctx, "gradient_check", worst, ctx.tol["gradient"]))
    study = replication_study(payoff, model, num_paths=ctx.num_paths, seed=ctx.seed, steps=(64,),
                              n_jobs=ctx.n_jobs)
    m, se = study.stats["replication_error_steps_64"]
    out.append(_within_se(ctx, "replication_mc", m, se, ctx.tol["n_se"]))
    c, cse = study.stats["cross_covariance"]
    out.append(_within_se(ctx, "orthogonality", c, cse, ctx.tol["n_se_loose"]))
    return out


CHECKS = {
    "single_jump": _single_jump_checks,
    "multi_jump": _multi_jump_checks,
    "discrete": _discrete_checks,
    "truncation_family": _truncation_checks,
    "cox": _cox_checks,
    "joint_diffusion": _joint_checks,
}


def run_property_suite(scenario, suite="default", seed=None, payoff=None, num_paths=None,
                       tolerances=None, inject=None, perturb=None, n_jobs=1):
    """Run the invariant checks for a scenario.

    Parameters
    ----------
    scenario : Scenario, dict or path
    suite : "default" or iterable of check names
    payoff : payoff object, dict or path, optional
        Defaults to the scenario kind's standard payoff.
    inject : {None, "integrand"}
    perturb : dict, optional
        ``check -> delta`` added to the measured quantity.

    Returns
    -------
    SuiteReport
    """
    sc = scenario if isinstance(scenario, Scenario) else Scenario.load(scenario)
    seed = sc.require_seed(seed)
    if inject not in (None, "integrand"):
        raise ConfigError(f"unknown fault injection {inject!r}")
    if payoff is None:
        payoff = default_payoff(sc)
    elif isinstance(payoff, (dict, str)) or hasattr(payoff, "__fspath__"):
        payoff = load_payoff(payoff, sc)
    tol = dict(DEFAULT_TOLERANCES)
    for k, v in (tolerances or {}).items():
        if k not in tol:
            raise ConfigError(f"unknown tolerance {k!r}")
        tol[k] = float(v)
    ctx = _Context(sc, sc.build(), payoff, seed, int(num_paths or MC_PATHS), tol, inject,
                   dict(perturb or {}), n_jobs)
    try:
        results = CHECKS[sc.kind](ctx)
    except ValidationError:
        raise
    names = {r.check for r in results}
    if suite != "default":
        wanted = [suite] if isinstance(suite, str) else list(suite)
        unknown = set(wanted) - names
        if unknown:
            raise ConfigError(f"unknown checks for {sc.kind}: {sorted(unknown)}; available {sorted(names)}")
        results = [r for r in results if r.check in wanted]
    unknown = set(ctx.perturb) - names
    if unknown:
        raise ConfigError(f"cannot perturb unknown checks {sorted(unknown)}")
    return SuiteReport(results)
