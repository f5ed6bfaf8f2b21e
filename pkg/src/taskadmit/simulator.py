"""Continuous-time event simulation of the admission problem.

Seed to stream mapping: episode seed ``s`` builds ``SeedSequence(s)`` and
spawns one child per class, in class order. Each class generator draws, in
this order, its thinned arrival times, one price per arrival and one unit
exponential per arrival (scaled by ``1/mu_k`` into a service time if the task
is accepted). Draws therefore do not depend on the policy, so methods are
compared on common random numbers.
"""
from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .domain import ArrivalRate, ProblemInstance

CSV_FIELDS = ["method", "n_abstractions", "episode", "seed", "total_reward", "n_accepted",
              "n_rejected_policy", "n_blocked_full", "wall_time_s"]


class Event(NamedTuple):
    time: float
    kind: str         # "arrival" or "completion"
    cls: int
    price: float
    decision: str     # accept / reject / blocked for arrivals, "credited" for completions


@dataclass
class EpisodeTrace:
    total_reward: float
    n_arrivals: int
    n_accepted: int
    n_rejected_policy: int
    n_blocked_full: int
    n_completed: int
    in_flight: int
    max_busy: int
    events: list = field(default_factory=list)


def sample_arrivals(rate: ArrivalRate, horizon: float, rng: np.random.Generator) -> np.ndarray:
    """Inhomogeneous Poisson arrival times on ``[0, horizon)`` by thinning."""
    bound = float(rate.upper_bound(horizon))
    if not math.isfinite(bound):
        raise ValueError("thinning needs a finite upper bound on the arrival rate")
    if bound <= 0:
        return np.empty(0)
    n = rng.poisson(bound * horizon)
    cand = np.sort(rng.uniform(0.0, horizon, size=n))
    keep = rng.uniform(0.0, 1.0, size=n) * bound < np.asarray(rate(cand), dtype=float)
    return cand[keep]


def _class_streams(instance: ProblemInstance, seed: int):
    children = np.random.SeedSequence(seed).spawn(instance.n_classes)
    out = []
    for k, (cls, child) in enumerate(zip(instance.classes, children)):
        rng = np.random.default_rng(child)
        times = sample_arrivals(cls.arrival, instance.horizon, rng)
        prices = np.asarray(cls.price.sample(rng, times.size), dtype=float)
        work = rng.exponential(1.0, size=times.size)
        out.append((times, np.full(times.size, k), prices, work / cls.service_rate))
    return out


def run_episode(instance: ProblemInstance, policy, seed: int, record: bool = False) -> EpisodeTrace:
    """Simulate one episode. Completions at or after the horizon earn nothing."""
    streams = _class_streams(instance, seed)
    times = np.concatenate([s[0] for s in streams])
    order = np.argsort(times, kind="stable")
    times = times[order].tolist()
    classes = np.concatenate([s[1] for s in streams])[order].tolist()
    prices = np.concatenate([s[2] for s in streams])[order].tolist()
    service = np.concatenate([s[3] for s in streams])[order].tolist()

    horizon = instance.horizon
    n_servers = instance.n_servers
    counts = [0] * instance.n_classes
    busy = max_busy = 0
    heap: list = []
    events: list = []
    reward = 0.0
    accepted = rejected = blocked = completed = 0
    for t, k, p, s in zip(times, classes, prices, service):
        while heap and heap[0][0] <= t:
            tc, kc, pc = heapq.heappop(heap)
            counts[kc] -= 1
            busy -= 1
            reward += pc
            completed += 1
            if record:
                events.append(Event(tc, "completion", kc, pc, "credited"))
        if busy >= n_servers:
            blocked += 1
            if record:
                events.append(Event(t, "arrival", k, p, "blocked"))
            continue
        if policy.decide(tuple(counts), k, p, t):
            accepted += 1
            counts[k] += 1
            busy += 1
            max_busy = max(max_busy, busy)
            heapq.heappush(heap, (t + s, k, p))
            if record:
                events.append(Event(t, "arrival", k, p, "accept"))
        else:
            rejected += 1
            if record:
                events.append(Event(t, "arrival", k, p, "reject"))
    while heap and heap[0][0] < horizon:
        tc, kc, pc = heapq.heappop(heap)
        reward += pc
        completed += 1
        if record:
            events.append(Event(tc, "completion", kc, pc, "credited"))
    return EpisodeTrace(reward, len(times), accepted, rejected, blocked, completed, len(heap),
                        max_busy, events)


@dataclass
class EvaluationResult:
    mean: float
    se: float
    rewards: np.ndarray
    rows: list


def _run_one(args):
    instance, policy, seed = args
    started = time.perf_counter()
    trace = run_episode(instance, policy, seed)
    return trace, time.perf_counter() - started


def evaluate(policy, instance: ProblemInstance, episodes: int, base_seed: int = 0,
             method: str | None = None, n_abstractions="", jobs: int = 1,
             timings: bool = True) -> EvaluationResult:
    """Run episodes with seeds ``base_seed .. base_seed + episodes - 1``.

    ``timings=False`` writes 0 into ``wall_time_s`` so the rows are fully
    reproducible.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    seeds = list(range(base_seed, base_seed + episodes))
    tasks = [(instance, policy, s) for s in seeds]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, tasks, chunksize=max(1, episodes // (4 * jobs))))
    else:
        results = [_run_one(t) for t in tasks]
    rewards = np.array([r[0].total_reward for r in results])
    se = float(rewards.std(ddof=1) / math.sqrt(episodes)) if episodes > 1 else 0.0
    name = method or getattr(policy, "name", "policy")
    rows = []
    for ep, (seed, (trace, wall)) in enumerate(zip(seeds, results)):
        rows.append({
            "method": name, "n_abstractions": n_abstractions, "episode": ep, "seed": seed,
            "total_reward": trace.total_reward, "n_accepted": trace.n_accepted,
            "n_rejected_policy": trace.n_rejected_policy, "n_blocked_full": trace.n_blocked_full,
            "wall_time_s": round(wall, 6) if timings else 0.0,
        })
    return EvaluationResult(float(rewards.mean()), se, rewards, rows)
