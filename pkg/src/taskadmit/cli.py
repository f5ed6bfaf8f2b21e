"""Command-line entry point.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 when every
requested method was skipped for exceeding its budget.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

from . import abstraction, experiment, hmdp, simulator, stationary
from .config import ExperimentConfig, load_config
from .errors import BudgetExceeded, ConfigError

EXIT_OK, EXIT_INVALID, EXIT_SKIPPED = 0, 2, 3


def _formats(value: str):
    return ("csv", "svg") if value == "both" else (value,)


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", required=True, help="config file or bundled config name")
    p.add_argument("--out", help="output directory (default: the config's output_dir)")
    p.add_argument("--seed", type=int, help="override the config's base seed")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for episode evaluation")
    p.add_argument("--budget-seconds", type=float, help="override the per-method compute budget")
    p.add_argument("--format", choices=["csv", "svg", "both"], default="both")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="taskadmit", description="Multi-class task admission control")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="exact value iteration; writes the policy tables")
    _common(p)
    p = sub.add_parser("evaluate", help="simulate one method and write per-episode rows")
    _common(p)
    p.add_argument("--method", required=True,
                   help="method name from the config, e.g. vi_no_abstr or vi_order_stat_abstr")
    p.add_argument("--n-abstractions", type=int, help="abstract state count for abstraction methods")
    p.add_argument("--episodes", type=int, help="override the config's episode count")
    p = sub.add_parser("experiment", help="run every configured method and write CSV and SVG outputs")
    _common(p)
    p = sub.add_parser("dt-sweep", help="exact VI reward as a function of the time step")
    _common(p)
    p.add_argument("--dt", type=float, nargs="+", help="time steps (default: the config's dt_sweep)")
    p = sub.add_parser("abstract", help="build an aggregation map and write it as CSV")
    _common(p)
    p.add_argument("--kind", choices=["order_stats", "stationary", "random", "identity"], default="order_stats")
    p.add_argument("--n-abstractions", type=int, required=True)
    p.add_argument("--samples", type=int, default=5000)
    p.add_argument("--standardize", action="store_true")
    p = sub.add_parser("stationary", help="average-reward solution with mean arrival rates")
    _common(p)
    return parser


def _out_dir(args, config: ExperimentConfig) -> Path:
    out = Path(args.out or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _budget(args, config):
    return args.budget_seconds if args.budget_seconds is not None else config.budget_seconds


def cmd_solve(args, config):
    out = _out_dir(args, config)
    t0 = time.monotonic()
    tables = hmdp.solve(config.instance, memory_budget=config.memory_budget,
                        deadline=t0 + _budget(args, config))
    hmdp.write_tables(tables, out / "tables.bin")
    info = {"combinations": int(tables.reject_q.shape[1]), "epochs": tables.n_epochs + 1,
            "solve_time_s": tables.solve_seconds, "initial_reject_value": float(tables.reject_q[0, 0])}
    (out / "solve.json").write_text(json.dumps(info, indent=2) + "\n")
    print(json.dumps(info))
    return EXIT_OK


def cmd_evaluate(args, config):
    out = _out_dir(args, config)
    methods = []
    for spec in config.methods:
        if experiment._method_name(spec) != args.method:
            continue
        spec = dict(spec)
        if spec["method"] == "vi_abstr":
            spec["n_abstractions"] = [args.n_abstractions] if args.n_abstractions else spec["n_abstractions"]
        methods.append(spec)
    if not methods:
        raise ConfigError(f"method {args.method!r} is not listed in the config")
    config.methods = methods
    if args.episodes:
        config.episodes = args.episodes
    res = experiment.run_experiment(config, out, args.jobs, _budget(args, config), formats=("csv",))
    for row in res.summary:
        print(f"{row['method']} {row['n_abstractions']} mean={row['mean']} se={row['se']} {row['status']}")
    return EXIT_SKIPPED if res.all_skipped else EXIT_OK


def cmd_experiment(args, config):
    res = experiment.run_experiment(config, _out_dir(args, config), args.jobs, _budget(args, config),
                                    formats=_formats(args.format))
    for row in res.summary:
        print(f"{row['method']:<22} {str(row['n_abstractions']):>5}  mean={row['mean']}  se={row['se']}  "
              f"{row['status']} {row['reason']}")
    return EXIT_SKIPPED if res.all_skipped else EXIT_OK


def cmd_dt_sweep(args, config):
    dts = args.dt or config.dt_sweep
    rows = experiment.dt_sweep(config, dts, _out_dir(args, config), args.jobs, _budget(args, config),
                               formats=_formats(args.format))
    for r in rows:
        print(f"dt={r['dt']:<6} mean={r['mean']} se={r['se']} {r['status']}")
    return EXIT_SKIPPED if all(r["status"] != "ok" for r in rows) else EXIT_OK


def cmd_abstract(args, config):
    out = _out_dir(args, config)
    deadline = time.monotonic() + _budget(args, config)
    amap = abstraction.build_aggregation(args.kind, config.instance, args.n_abstractions, seed=config.seed,
                                         samples=args.samples, standardize=args.standardize,
                                         deadline=deadline)
    path = abstraction.write_aggregation_csv(amap, out / f"aggregation_{args.kind}_{amap.n_abstract}.csv")
    print(path)
    return EXIT_OK


def cmd_stationary(args, config):
    out = _out_dir(args, config)
    sol = stationary.solve_stationary(config.instance, deadline=time.monotonic() + _budget(args, config))
    names = [c.name for c in config.instance.classes]
    with open(out / "stationary_thresholds.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["combination_index", *[f"n_{n}" for n in names], "relative_q",
                    *[f"threshold_{n}" for n in names]])
        for i, n in enumerate(sol.space.counts):
            w.writerow([i, *n.tolist(), repr(float(sol.relative_q[i])),
                        *[repr(float(x)) for x in sol.critical_price[i]]])
    info = {"gain_per_second": sol.gain, "gain_over_horizon": sol.gain * config.instance.horizon,
            "iterations": sol.iterations, "eta": sol.eta}
    (out / "stationary.json").write_text(json.dumps(info, indent=2) + "\n")
    print(json.dumps(info))
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "evaluate": cmd_evaluate, "experiment": cmd_experiment,
            "dt-sweep": cmd_dt_sweep, "abstract": cmd_abstract, "stationary": cmd_stationary}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config.seed = args.seed
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        return COMMANDS[args.command](args, config)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except BudgetExceeded as exc:
        print(f"skipped ({exc.reason}): {exc}", file=sys.stderr)
        return EXIT_SKIPPED


if __name__ == "__main__":
    sys.exit(main())
