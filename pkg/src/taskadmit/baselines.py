"""Comparison policies: averaged single class, stationary thresholds and a
grid search over service-time-proportional thresholds."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .domain import MixturePrice, ProblemInstance, SumRate, TaskClass
from .errors import BudgetExceeded
from .hmdp import DEFAULT_MEMORY_BUDGET, solve
from .policies import AverageClassPolicy, ClassThresholdPolicy, StationaryPolicy
from .simulator import evaluate

GRID_SIZE = 50
GRID_SEED_OFFSET = 1_000_000  # tuning seeds start here, away from evaluation seeds


def class_weights(instance: ProblemInstance) -> np.ndarray:
    rates = instance.mean_rates()
    if rates.sum() <= 0:
        raise ValueError("average class needs at least one class with a positive mean rate")
    return rates / rates.sum()


def average_instance(instance: ProblemInstance, avg_rate_mode: str = "arithmetic") -> ProblemInstance:
    """Single-class instance: summed arrivals, weighted service rate, mixture prices."""
    w = class_weights(instance)
    mu = instance.service_rates
    if avg_rate_mode == "arithmetic":
        mu_avg = float(w @ mu)
    elif avg_rate_mode == "harmonic":
        mu_avg = float(1.0 / (w @ (1.0 / mu)))
    else:
        raise ValueError(f"avg_rate_mode must be 'arithmetic' or 'harmonic', got {avg_rate_mode!r}")
    if instance.n_classes == 1:
        arrival, price = instance.classes[0].arrival, instance.classes[0].price
    else:
        arrival = SumRate(tuple(c.arrival for c in instance.classes))
        price = MixturePrice(tuple(c.price for c in instance.classes), tuple(w))
    avg = TaskClass("average", mu_avg, arrival, price)
    return ProblemInstance((avg,), instance.n_servers, instance.horizon, instance.dt)


def build_avg_class(instance: ProblemInstance, avg_rate_mode: str = "arithmetic",
                    memory_budget: int = DEFAULT_MEMORY_BUDGET, deadline: float | None = None):
    tables = solve(average_instance(instance, avg_rate_mode), memory_budget=memory_budget,
                   deadline=deadline)
    return AverageClassPolicy(tables)


def build_stationary_policy(solution) -> StationaryPolicy:
    return StationaryPolicy(solution)


def grid_bounds(instance: ProblemInstance) -> tuple[float, float]:
    """``[1e-2 * pbar * mu_max, 1e3 * pbar * mu_min]`` with ``pbar`` the
    rate-weighted mean price."""
    w = class_weights(instance)
    pbar = float(sum(wk * c.price.mean for wk, c in zip(w, instance.classes)))
    mu = instance.service_rates
    return 1e-2 * pbar * float(mu.max()), 1e3 * pbar * float(mu.min())


def grid_candidates(lo: float, hi: float, n: int = GRID_SIZE) -> np.ndarray:
    if not 0 < lo < hi:
        raise ValueError("grid bounds need 0 < lo < hi")
    return np.logspace(math.log10(lo), math.log10(hi), n)


def thresholds_for(instance: ProblemInstance, c: float) -> list[float]:
    return [c / mu for mu in instance.service_rates]


@dataclass
class GridSearchResult:
    policy: ClassThresholdPolicy
    best_c: float
    candidates: np.ndarray
    means: np.ndarray
    ses: np.ndarray
    seconds: float


def grid_search(instance: ProblemInstance, candidates=None, episodes: int = 300, seed: int = 0,
                jobs: int = 1, deadline: float | None = None) -> GridSearchResult:
    """Pick the ``C`` with the best mean simulated reward; thresholds ``C / mu_k``.

    Candidate ``j`` uses its own seed block starting at
    ``GRID_SEED_OFFSET + seed + j * episodes``, disjoint from evaluation seeds.
    """
    started = time.monotonic()
    if candidates is None:
        candidates = grid_candidates(*grid_bounds(instance))
    candidates = np.asarray(candidates, dtype=float)
    means = np.empty(candidates.size)
    ses = np.empty(candidates.size)
    for j, c in enumerate(candidates):
        if deadline is not None and time.monotonic() > deadline:
            raise BudgetExceeded("grid search exceeded its compute-time budget")
        pol = ClassThresholdPolicy(thresholds_for(instance, c), instance.n_servers)
        res = evaluate(pol, instance, episodes, GRID_SEED_OFFSET + seed + j * episodes, jobs=jobs)
        means[j], ses[j] = res.mean, res.se
    best = int(np.argmax(means))
    policy = ClassThresholdPolicy(thresholds_for(instance, candidates[best]), instance.n_servers,
                                  name="grid_search")
    return GridSearchResult(policy, float(candidates[best]), candidates, means, ses,
                            time.monotonic() - started)
