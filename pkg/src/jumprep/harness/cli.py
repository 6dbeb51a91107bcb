"""Command-line entry point ``jumprep``.

Exit codes: 0 success, 1 a check failed, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .._validation import ValidationError
from .emit import EmitError, emit_results
from .scenario import ConfigError, Scenario, default_payoff, load_payoff

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    vals = _floats(text)
    if any(v != int(v) for v in vals):
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    return [int(v) for v in vals]


def _add_common(p, scenario=True):
    if scenario:
        p.add_argument("--scenario", required=True, help="scenario JSON file or bundled name")
    p.add_argument("--seed", type=int, help="overrides the scenario seed")
    p.add_argument("--paths", type=int, help="number of Monte Carlo paths")
    p.add_argument("--out", default="-", help="output file ('-' for stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers; output does not depend on it")


def build_parser():
    parser = argparse.ArgumentParser(prog="jumprep", description="Martingale representations for jump processes.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="simulate jump paths as {path, time, mark} rows")
    _add_common(p)
    p.add_argument("--level", type=int, help="truncation level for truncation_family scenarios")

    p = sub.add_parser("represent", help="tabulate the representation integrand as {t, mark, value}")
    _add_common(p)
    p.add_argument("--payoff", help="payoff JSON file or bundled name")
    p.add_argument("--grid", type=int, help="number of time steps of the output grid")

    p = sub.add_parser("verify", help="run the property suite")
    _add_common(p)
    p.add_argument("--payoff")
    p.add_argument("--suite", default="default", help="'default' or comma-separated check names")
    p.add_argument("--inject", choices=("integrand",), help="fault injection for self-tests")

    p = sub.add_parser("truncate", help="parochial truncation study")
    _add_common(p)
    p.add_argument("--payoff")
    p.add_argument("--levels", type=_ints, default=[2, 4, 6, 8])
    p.add_argument("--grid", type=int, default=128, help="time cells of the frozen integrand")

    p = sub.add_parser("counterexample", help="Cox-process estimator study")
    _add_common(p, scenario=False)
    p.add_argument("--scenario", help="cox scenario supplying defaults")
    p.add_argument("--n", type=_floats)
    p.add_argument("--h", type=_floats)
    p.add_argument("--t", type=float)
    p.add_argument("--eps", type=float)

    p = sub.add_parser("hedge", help="replication study for a joint diffusion scenario")
    _add_common(p)
    p.add_argument("--payoff")
    p.add_argument("--steps", type=_ints, default=[16, 64, 256])
    return parser


def _scenario(args, kinds=None):
    sc = Scenario.load(args.scenario)
    if kinds and sc.kind not in kinds:
        raise ConfigError(f"{args.command} needs a scenario of kind {' or '.join(kinds)}, got {sc.kind}")
    return sc


def _payoff(args, sc):
    return default_payoff(sc) if args.payoff is None else load_payoff(args.payoff, sc)


def _cmd_gen(args):
    sc = _scenario(args, ("single_jump", "multi_jump", "discrete", "truncation_family", "joint_diffusion"))
    seed = sc.require_seed(args.seed)
    n = args.paths or 10
    model = sc.build()
    if sc.kind == "single_jump":
        batch, marks = model.sample(n, seed, args.jobs), model.marks
    else:
        if sc.kind == "truncation_family":
            model = model.level_model(args.level if args.level is not None else 4)
        elif sc.kind == "joint_diffusion":
            if model.jumps is None:
                raise ConfigError("the scenario has no jump component")
            model = model.jumps
        batch, marks = model.simulate(n, seed, args.jobs), model.marks
    labels = marks.labels
    rows = [{"path": int(p), "time": float(t), "mark": labels[m]}
            for p, t, m in zip(batch.path_index, batch.times, batch.marks)]
    return rows, ("path", "time", "mark"), EXIT_OK


def _cmd_represent(args):
    from ..measure_core import JumpPath
    from ..multi_jump import well_ordered_integrand
    from ..single_jump import chou_meyer_integrand

    sc = _scenario(args, ("single_jump", "multi_jump", "discrete"))
    payoff = _payoff(args, sc)
    model = sc.build()
    steps = args.grid or sc.grid_steps
    if sc.kind == "single_jump":
        field = chou_meyer_integrand(payoff, model)
        times = np.linspace(model.start, model.horizon, steps + 1)[1:]
        values = field(times)
    else:
        # integrand before the first jump, i.e. along the empty history
        field = well_ordered_integrand(payoff, model)
        if sc.kind == "discrete":
            times = np.asarray(model.slot_times, dtype=float)
        else:
            times = np.linspace(0.0, model.horizon, steps + 1)[1:]
        values = field(times, JumpPath.empty(model.horizon))
    labels = model.marks.labels
    rows = [{"t": float(t), "mark": labels[z], "value": float(values[i, z])}
            for i, t in enumerate(times) for z in range(len(labels))]
    return rows, ("t", "mark", "value"), EXIT_OK


def _cmd_verify(args):
    from .suite import run_property_suite

    sc = _scenario(args)
    suite = args.suite if args.suite == "default" else [s.strip() for s in args.suite.split(",")]
    report = run_property_suite(sc, suite=suite, seed=args.seed, payoff=args.payoff,
                                num_paths=args.paths, inject=args.inject, n_jobs=args.jobs)
    return report.rows(), ("check", "status", "value", "tolerance"), EXIT_OK if report.passed else EXIT_FAIL


def _cmd_truncate(args):
    from ..multi_jump import parochial_truncation_study

    sc = _scenario(args, ("truncation_family",))
    payoff = _payoff(args, sc)
    report = parochial_truncation_study(sc.build(), payoff, args.levels, num_paths=args.paths or 100_000,
                                        seed=sc.require_seed(args.seed), n_cells=args.grid, n_jobs=args.jobs)
    return report.rows(), ("level", "statistic", "value", "std_error"), EXIT_OK


def _cmd_counterexample(args):
    from ..cox import cox_counterexample_experiment

    params = dict(t=1.0, eps=0.5, n=[1e2, 1e3, 1e4], h=[0.1, 0.01])
    seed, horizon = args.seed, None
    if args.scenario:
        sc = _scenario(args, ("cox",))
        params.update(sc.build())
        seed, horizon = sc.require_seed(args.seed), sc.horizon
    for key in ("n", "h", "t", "eps"):
        if getattr(args, key) is not None:
            params[key] = getattr(args, key)
    if seed is None:
        raise ConfigError("a seed is required (--seed or a scenario seed)")
    report = cox_counterexample_experiment(params["n"], params["h"], params["t"], args.paths or 10_000,
                                           params["eps"], seed, horizon=horizon, n_jobs=args.jobs)
    return report.rows(), ("n", "h", "statistic", "value", "std_error"), EXIT_OK


def _cmd_hedge(args):
    from ..jump_diffusion import replication_study

    sc = _scenario(args, ("joint_diffusion",))
    report = replication_study(_payoff(args, sc), sc.build(), num_paths=args.paths or 100_000,
                               seed=sc.require_seed(args.seed), steps=args.steps, n_jobs=args.jobs)
    return report.rows(), ("quantity", "value", "std_error"), EXIT_OK


COMMANDS = {
    "gen": _cmd_gen,
    "represent": _cmd_represent,
    "verify": _cmd_verify,
    "truncate": _cmd_truncate,
    "counterexample": _cmd_counterexample,
    "hedge": _cmd_hedge,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        rows, columns, code = COMMANDS[args.command](args)
        text = emit_results(rows, args.format, args.out, columns if args.format == "csv" else None)
    except (ConfigError, ValidationError, EmitError, ValueError, NotImplementedError) as exc:
        print(f"jumprep {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.out == "-":
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
