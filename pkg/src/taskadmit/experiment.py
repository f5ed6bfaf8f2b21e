"""Experiment orchestration: build each configured method within the compute
budget, evaluate it on common seeds and write CSV and SVG outputs."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import abstraction, baselines, hmdp, plotting, policies, simulator, stationary
from .config import ExperimentConfig
from .domain import CombinationSpace
from .errors import BudgetExceeded

log = logging.getLogger(__name__)

SUMMARY_FIELDS = ["method", "n_abstractions", "mean", "se", "solve_time_s", "status", "reason"]
DT_FIELDS = ["dt", "mean", "se", "solve_time_s", "q_initial", "status", "reason"]
AGGREGATION_METHOD = {"order_stats": "vi_order_stat_abstr", "stationary": "vi_stationary_abstr",
                      "random": "vi_random_abstr"}


@dataclass
class ExperimentResult:
    summary: list
    episodes: list = field(default_factory=list)
    files: list = field(default_factory=list)

    @property
    def all_skipped(self) -> bool:
        return all(r["status"] != "ok" for r in self.summary)


def _write_csv(path: Path, fields: list, rows: list) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return path


class _Context:
    """Caches pieces shared between methods (stationary solution, features)."""

    def __init__(self, config: ExperimentConfig, budget: float, jobs: int):
        self.config = config
        self.instance = config.instance
        self.budget = budget
        self.jobs = jobs
        self._stationary = None
        self._stationary_time = 0.0
        self._features: dict = {}

    def deadline(self, started: float) -> float:
        return started + self.budget

    def stationary(self, deadline):
        if self._stationary is None:
            t0 = time.monotonic()
            self._stationary = stationary.solve_stationary(self.instance, deadline=deadline)
            self._stationary_time = time.monotonic() - t0
        return self._stationary, self._stationary_time

    def features(self, kind, spec, deadline):
        key = (kind, spec.get("samples", 5000), spec.get("standardize", False))
        if key not in self._features:
            t0 = time.monotonic()
            space = CombinationSpace(self.instance.n_servers, self.instance.n_classes)
            if kind == "order_stats":
                feats = abstraction.order_stats_matrix(self.instance, space, key[1], self.config.seed,
                                                       deadline)
                extra = 0.0
            else:
                sol, extra = self.stationary(deadline)
                feats = abstraction.features_stationary(sol)
            if key[2]:
                feats = abstraction.standardise(feats)
            self._features[key] = (feats, time.monotonic() - t0 + extra)
        return self._features[key]


def _build_abstract(ctx: _Context, spec: dict, n_abs: int, deadline: float):
    inst, seed = ctx.instance, ctx.config.seed
    kind = spec["aggregation"]
    t0 = time.monotonic()
    pre = 0.0
    if kind == "random":
        size = CombinationSpace(inst.n_servers, inst.n_classes).size
        amap = abstraction.AggregationMap.uniform(abstraction.random_aggregation(size, n_abs, seed), n_abs)
    else:
        feats, pre = ctx.features(kind, spec, deadline)
        t0 = time.monotonic()
        res = abstraction.kmeans(feats, n_abs, inits=spec.get("kmeans_inits", 20), seed=seed)
        amap = abstraction.AggregationMap.uniform(res.labels, n_abs)
    tables = abstraction.solve_abstract(inst, amap, deadline=deadline)
    return abstraction.ground_policy(amap, tables), pre + time.monotonic() - t0


def _build(ctx: _Context, spec: dict, deadline: float):
    """Return ``[(n_abstractions, policy, seconds), ...]`` for one method entry."""
    inst = ctx.instance
    m = spec["method"]
    t0 = time.monotonic()
    if m == "vi_no_abstr":
        tables = hmdp.solve(inst, memory_budget=ctx.config.memory_budget, deadline=deadline)
        return [("", policies.TablePolicy(tables), time.monotonic() - t0)]
    if m == "stationary":
        sol, secs = ctx.stationary(deadline)
        return [("", baselines.build_stationary_policy(sol), secs)]
    if m == "vi_avg_class":
        pol = baselines.build_avg_class(inst, spec.get("avg_rate_mode", "arithmetic"),
                                        memory_budget=ctx.config.memory_budget, deadline=deadline)
        return [("", pol, time.monotonic() - t0)]
    if m == "grid_search":
        bounds = spec.get("bounds") or baselines.grid_bounds(inst)
        cands = baselines.grid_candidates(bounds[0], bounds[1], spec.get("candidates", baselines.GRID_SIZE))
        res = baselines.grid_search(inst, cands, spec.get("episodes", 300), ctx.config.seed, ctx.jobs,
                                    deadline)
        return [("", res.policy, res.seconds)]
    if m == "accept_all":
        return [("", policies.accept_all(inst.n_classes, inst.n_servers), 0.0)]
    if m == "reject_all":
        return [("", policies.reject_all(inst.n_classes, inst.n_servers), 0.0)]
    raise ValueError(f"unknown method {m!r}")


def _method_name(spec):
    return AGGREGATION_METHOD[spec["aggregation"]] if spec["method"] == "vi_abstr" else spec["method"]


def run_experiment(config: ExperimentConfig, out_dir: str | Path | None = None, jobs: int = 1,
                   budget_seconds: float | None = None, formats=("csv", "svg")) -> ExperimentResult:
    """Methods run one after another so their solve times are comparable. A
    method that exceeds the budget is recorded as skipped with reason
    ``budget`` and the run continues."""
    out = Path(out_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    budget = budget_seconds if budget_seconds is not None else config.budget_seconds
    ctx = _Context(config, budget, jobs)
    summary, episodes = [], []
    timings = config.timings

    def record(name, n_abs, status, reason="", mean="", se="", secs=0.0):
        summary.append({"method": name, "n_abstractions": n_abs, "mean": mean, "se": se,
                        "solve_time_s": round(secs, 6) if timings else 0.0,
                        "status": status, "reason": reason})

    for spec in config.methods:
        name = _method_name(spec)
        sizes = spec["n_abstractions"] if spec["method"] == "vi_abstr" else [""]
        for n_abs in sizes:
            started = time.monotonic()
            deadline = ctx.deadline(started)
            try:
                if spec["method"] == "vi_abstr":
                    policy, secs = _build_abstract(ctx, spec, n_abs, deadline)
                    built = [(n_abs, policy, secs)]
                else:
                    built = _build(ctx, spec, deadline)
            except BudgetExceeded as exc:
                log.warning("%s %s skipped: %s", name, n_abs, exc)
                record(name, n_abs, "skipped", "budget")
                continue
            except ValueError as exc:
                # e.g. more abstract states than combinations
                log.warning("%s %s skipped: %s", name, n_abs, exc)
                record(name, n_abs, "skipped", f"invalid: {exc}")
                continue
            for n, policy, secs in built:
                res = simulator.evaluate(policy, config.instance, config.episodes, config.seed, method=name,
                                         n_abstractions=n, jobs=jobs, timings=timings)
                episodes.extend(res.rows)
                record(name, n, "ok", "", res.mean, res.se, secs)
                log.info("%s %s: mean %.1f se %.1f (build %.1fs)", name, n, res.mean, res.se, secs)

    files = []
    if "csv" in formats:
        files.append(_write_csv(out / "episodes.csv", simulator.CSV_FIELDS, episodes))
        files.append(_write_csv(out / "summary.csv", SUMMARY_FIELDS, summary))
    if "svg" in formats:
        files.append(plotting.plot_reward_vs_abstractions(summary, out / "reward_vs_abstractions.svg",
                                                          config.name))
        files.append(plotting.plot_solve_times(summary, out / "solve_times.svg", config.name))
        files.append(plotting.plot_arrival_rates(config.instance, out / "arrival_rates.svg"))
    return ExperimentResult(summary, episodes, files)


def dt_sweep(config: ExperimentConfig, dt_values, out_dir: str | Path | None = None, jobs: int = 1,
             budget_seconds: float | None = None, formats=("csv", "svg")) -> list[dict]:
    """Exact VI at each time step, evaluated on the same seeds."""
    dt_values = [float(x) for x in dt_values]
    if len(dt_values) < 2:
        raise ValueError("dt sweep needs at least two dt values")
    if any(d <= 0 for d in dt_values):
        raise ValueError("dt values must be > 0")
    out = Path(out_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    budget = budget_seconds if budget_seconds is not None else config.budget_seconds
    rows = []
    for dt in dt_values:
        inst = config.instance.with_dt(dt)
        t0 = time.monotonic()
        try:
            tables = hmdp.solve(inst, memory_budget=config.memory_budget, deadline=t0 + budget)
        except BudgetExceeded:
            rows.append({"dt": dt, "mean": "", "se": "", "solve_time_s": 0.0, "q_initial": "",
                         "status": "skipped", "reason": "budget"})
            continue
        secs = time.monotonic() - t0
        res = simulator.evaluate(policies.TablePolicy(tables), inst, config.episodes, config.seed, jobs=jobs,
                                 timings=config.timings)
        rows.append({"dt": dt, "mean": res.mean, "se": res.se,
                     "solve_time_s": round(secs, 6) if config.timings else 0.0,
                     "q_initial": float(tables.reject_q[0, 0]), "status": "ok", "reason": ""})
    if "csv" in formats:
        _write_csv(out / "dt_sweep.csv", DT_FIELDS, rows)
    if "svg" in formats:
        plotting.plot_dt_sweep([r for r in rows if r["status"] == "ok"], out / "dt_sweep.svg", config.name)
    return rows
