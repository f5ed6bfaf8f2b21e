"""State aggregation over combinations and value iteration on the aggregate.

A map assigns every combination to one abstract id and carries uniform weights
within each cluster. Abstract dynamics are weight-averaged ground dynamics; the
abstract policy is lifted back to ground states through the assignment.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .domain import CombinationSpace, ProblemInstance
from .hmdp import _arrival_table, _check_deadline, _fin_table, _DEADLINE_CHECK_EVERY
from .stationary import StationarySolution

WEIGHT_TOL = 1e-12
RANDOM_MAX_TRIES = 1000


@dataclass
class AggregationMap:
    assignment: np.ndarray   # (M,) abstract id per combination
    weights: np.ndarray      # (M,) sums to 1 within each cluster
    n_abstract: int

    def __post_init__(self):
        self.assignment = np.asarray(self.assignment, dtype=np.int64)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.assignment.ndim != 1 or self.assignment.shape != self.weights.shape:
            raise ValueError("assignment and weights must be 1-d arrays of equal length")
        if self.assignment.size and (self.assignment.min() < 0 or self.assignment.max() >= self.n_abstract):
            raise ValueError("abstract ids must lie in 0..n_abstract-1")
        sizes = np.bincount(self.assignment, minlength=self.n_abstract)
        if np.any(sizes == 0):
            raise ValueError("every abstract id needs at least one combination")
        if np.any(self.weights < 0):
            raise ValueError("weights must be >= 0")
        sums = np.bincount(self.assignment, weights=self.weights, minlength=self.n_abstract)
        if np.max(np.abs(sums - 1.0)) > WEIGHT_TOL:
            raise ValueError("weights must sum to 1 within each cluster")

    @classmethod
    def uniform(cls, assignment, n_abstract: int | None = None) -> "AggregationMap":
        assignment = np.asarray(assignment, dtype=np.int64)
        if n_abstract is None:
            n_abstract = int(assignment.max()) + 1
        sizes = np.bincount(assignment, minlength=n_abstract).astype(float)
        with np.errstate(divide="ignore"):
            weights = 1.0 / sizes[assignment]
        return cls(assignment, weights, n_abstract)

    @classmethod
    def identity(cls, size: int) -> "AggregationMap":
        return cls(np.arange(size), np.ones(size), size)

    @property
    def size(self) -> int:
        return self.assignment.size

    def members(self, a: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == a)


@dataclass
class AbstractTables:
    """``reject_q[i, a]`` and ``critical_price[i, a, k]``, epoch-major like the
    ground tables. ``accept_mass[a]`` is the weight of non-full members."""

    reject_q: np.ndarray
    critical_price: np.ndarray
    accept_mass: np.ndarray
    dt: float
    n_servers: int
    n_classes: int
    solve_seconds: float = 0.0
    transitions: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_epochs(self) -> int:
        return self.reject_q.shape[0] - 1

    def epoch_of(self, t: float) -> int:
        return min(int(t / self.dt + 1e-9), self.n_epochs)


# --------------------------------------------------------------------------
# features
# --------------------------------------------------------------------------


def features_stationary(solution: StationarySolution) -> np.ndarray:
    """Rows ``[Q(n, rej), p_cr(n, k_1), ..., p_cr(n, k_K)]``."""
    return np.column_stack([solution.relative_q, solution.critical_price])


def features_order_stats(instance: ProblemInstance, counts, samples: int = 5000, seed=0) -> np.ndarray:
    """Monte Carlo mean of sorted server-free times, one entry per server.

    Entry ``q-1`` estimates the expected time until at least ``q`` servers are
    free. Free servers contribute 0, busy class-k servers an exponential(mu_k).
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    counts = np.asarray(counts, dtype=np.int64)
    rng = np.random.default_rng(seed)
    busy_scale = np.repeat(1.0 / instance.service_rates, counts)
    n_free = instance.n_servers - busy_scale.size
    if n_free < 0:
        raise ValueError("combination uses more servers than available")
    draws = np.zeros((samples, instance.n_servers))
    if busy_scale.size:
        draws[:, n_free:] = rng.exponential(1.0, size=(samples, busy_scale.size)) * busy_scale
    draws.sort(axis=1)
    return draws.mean(axis=0)


def order_stats_matrix(instance: ProblemInstance, space: CombinationSpace, samples: int = 5000,
                       seed: int = 0, deadline: float | None = None) -> np.ndarray:
    """Order-statistics features for every combination. Combination ``i`` uses
    the generator seeded with ``[seed, i]``."""
    out = np.empty((space.size, instance.n_servers))
    for i, n in enumerate(space.counts):
        if i % 256 == 0:
            _check_deadline(deadline, "order-statistics features")
        out[i] = features_order_stats(instance, n, samples, seed=[seed, i])
    return out


# --------------------------------------------------------------------------
# clustering
# --------------------------------------------------------------------------


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    history: list  # inertia after each assignment step of the winning restart


def _sq_dist(x, c):
    d = (x * x).sum(axis=1)[:, None] - 2 * x @ c.T + (c * c).sum(axis=1)[None, :]
    return np.maximum(d, 0.0)


def _lloyd(x, k, rng, max_iter):
    n = x.shape[0]
    centroids = x[rng.choice(n, size=k, replace=False)].copy()
    labels = None
    history = []
    for _ in range(max_iter):
        d = _sq_dist(x, centroids)
        new = np.argmin(d, axis=1)
        counts = np.bincount(new, minlength=k)
        for j in np.flatnonzero(counts == 0):
            # re-seed at the point farthest from its centroid, taken from a cluster of size > 1
            cost = d[np.arange(n), new]
            cost = np.where(counts[new] > 1, cost, -1.0)
            far = int(np.argmax(cost))
            counts[new[far]] -= 1
            new[far] = j
            counts[j] = 1
            centroids[j] = x[far]
            d[:, j] = ((x - x[far]) ** 2).sum(axis=1)
        history.append(float(d[np.arange(n), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            centroids[j] = x[labels == j].mean(axis=0)
    return labels, centroids, history


def kmeans(points, k: int, inits: int = 20, seed: int = 0, max_iter: int = 300) -> KMeansResult:
    """Lloyd's algorithm with ``inits`` random-point restarts; keeps the lowest
    inertia. Always returns exactly ``k`` non-empty clusters."""
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > x.shape[0]:
        raise ValueError(f"cannot form {k} clusters from {x.shape[0]} points")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(inits, 1)):
        labels, centroids, history = _lloyd(x, k, rng, max_iter)
        inertia = float(((x - centroids[labels]) ** 2).sum())
        if best is None or inertia < best.inertia:
            best = KMeansResult(labels, centroids, inertia, history)
    return best


def random_aggregation(count: int, k: int, seed: int = 0) -> np.ndarray:
    """Uniform random surjective assignment of ``count`` items onto ``k`` ids.

    Resamples until every id is used; if that keeps failing (k close to count),
    a permutation guarantees one member per id and the rest are uniform.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > count:
        raise ValueError(f"cannot map {count} combinations onto {k} non-empty clusters")
    rng = np.random.default_rng(seed)
    for _ in range(RANDOM_MAX_TRIES):
        a = rng.integers(0, k, size=count)
        if np.bincount(a, minlength=k).min() > 0:
            return a
    a = rng.integers(0, k, size=count)
    a[rng.permutation(count)[:k]] = np.arange(k)
    return a


def standardise(features: np.ndarray) -> np.ndarray:
    sd = features.std(axis=0)
    sd[sd == 0] = 1.0
    return (features - features.mean(axis=0)) / sd


def build_aggregation(kind: str, instance: ProblemInstance, n_abstract: int, seed: int = 0,
                      samples: int = 5000, inits: int = 20, standardize: bool = False,
                      stationary_solution: StationarySolution | None = None,
                      deadline: float | None = None) -> AggregationMap:
    """One of ``order_stats``, ``stationary``, ``random`` or ``identity``."""
    space = CombinationSpace(instance.n_servers, instance.n_classes)
    if kind == "identity":
        return AggregationMap.identity(space.size)
    if kind == "random":
        return AggregationMap.uniform(random_aggregation(space.size, n_abstract, seed), n_abstract)
    if kind == "order_stats":
        feats = order_stats_matrix(instance, space, samples, seed, deadline)
    elif kind == "stationary":
        if stationary_solution is None:
            from .stationary import solve_stationary
            stationary_solution = solve_stationary(instance, deadline=deadline)
        feats = features_stationary(stationary_solution)
    else:
        raise ValueError(f"unknown aggregation kind {kind!r}")
    if standardize:
        feats = standardise(feats)
    _check_deadline(deadline, "clustering")
    result = kmeans(feats, n_abstract, inits=inits, seed=seed)
    return AggregationMap.uniform(result.labels, n_abstract)


# --------------------------------------------------------------------------
# abstract dynamics and value iteration
# --------------------------------------------------------------------------


def abstract_transition_matrix(amap: AggregationMap, space: CombinationSpace, service_rates,
                               dt: float) -> np.ndarray:
    """Dense ``(A, A)`` matrix of weighted ground completion probabilities."""
    a = amap.n_abstract
    out = np.zeros(a * a)
    for rows, cols, probs in space.transition_blocks(service_rates, dt):
        key = amap.assignment[rows] * a + amap.assignment[cols]
        out += np.bincount(key, weights=amap.weights[rows] * probs, minlength=a * a)
    return out.reshape(a, a)


def abstract_transition(amap: AggregationMap, instance: ProblemInstance, a: int, a_next: int,
                        dt: float | None = None) -> float:
    space = CombinationSpace(instance.n_servers, instance.n_classes)
    mat = abstract_transition_matrix(amap, space, instance.service_rates, dt or instance.dt)
    return float(mat[a, a_next])


def _post_accept_mix(amap: AggregationMap, space: CombinationSpace):
    """Per class, ``G[k] @ q`` averages ``q`` over the abstract post-accept states
    of a cluster's non-full members (weights renormalised)."""
    a = amap.n_abstract
    open_ = ~space.full
    mass = np.bincount(amap.assignment[open_], weights=amap.weights[open_], minlength=a)
    mixes = []
    for k in range(space.n_classes):
        g = np.zeros((a, a))
        src = amap.assignment[open_]
        dst = amap.assignment[space.accept_index[open_, k]]
        np.add.at(g, (src, dst), amap.weights[open_])
        with np.errstate(invalid="ignore", divide="ignore"):
            g = np.where(mass[:, None] > 0, g / mass[:, None], 0.0)
        mixes.append(g)
    return mass, mixes


def solve_abstract(instance: ProblemInstance, amap: AggregationMap,
                   deadline: float | None = None) -> AbstractTables:
    """Backward induction on the aggregate.

    The arrival bonus of a cluster is scaled by its non-full mass, since only
    those members can take a task. A cluster with no non-full member has
    acceptance disabled and critical price 0.
    """
    started = time.monotonic()
    space = CombinationSpace(instance.n_servers, instance.n_classes)
    if amap.size != space.size:
        raise ValueError(f"map covers {amap.size} combinations, instance has {space.size}")
    p_hat = abstract_transition_matrix(amap, space, instance.service_rates, instance.dt)
    mass, mixes = _post_accept_mix(amap, space)
    shortages = [c.price.shortage for c in instance.classes]
    arrive = _arrival_table(instance)
    fin = _fin_table(instance)
    n_ep, a, n_cls = instance.n_epochs, amap.n_abstract, instance.n_classes
    can_accept = mass > 0

    q = np.zeros((n_ep + 1, a))
    pcr = np.zeros((n_ep + 1, a, n_cls))
    for i in range(n_ep - 1, -1, -1):
        if i % _DEADLINE_CHECK_EVERY == 0:
            _check_deadline(deadline, "abstract value iteration")
        bonus = np.zeros(a)
        for k in range(n_cls):
            w = arrive[i, k] * fin[i + 1, k]
            if w > 0:
                bonus += w * shortages[k](pcr[i + 1, :, k])
        q_now = p_hat @ (q[i + 1] + mass * bonus)
        np.maximum(q_now, 0.0, out=q_now)
        q[i] = q_now
        for k in range(n_cls):
            diff = q_now - mixes[k] @ q_now
            pcr[i, can_accept, k] = np.maximum(diff[can_accept] / fin[i, k], 0.0)
    return AbstractTables(q, pcr, mass, instance.dt, instance.n_servers, n_cls,
                          time.monotonic() - started, p_hat)


def ground_policy(amap: AggregationMap, tables: AbstractTables):
    from .policies import AbstractTablePolicy

    return AbstractTablePolicy(tables, amap.assignment)


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------


def write_aggregation_csv(amap: AggregationMap, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["combination_index", "abstract_id", "weight"])
        for i, (a, wt) in enumerate(zip(amap.assignment, amap.weights)):
            w.writerow([i, int(a), repr(float(wt))])
    return path


def read_aggregation_csv(path: str | Path) -> AggregationMap:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    idx = np.array([int(r["combination_index"]) for r in rows])
    if not np.array_equal(np.sort(idx), np.arange(len(rows))):
        raise ValueError(f"{path}: combination indices must cover 0..{len(rows) - 1} exactly once")
    order = np.argsort(idx)
    assignment = np.array([int(rows[j]["abstract_id"]) for j in order])
    weights = np.array([float(rows[j]["weight"]) for j in order])
    return AggregationMap(assignment, weights, int(assignment.max()) + 1)
