"""Problem-instance model: arrival rates, price distributions, task classes and
the combination state space."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

__all__ = [
    "ArrivalRate",
    "ConstantRate",
    "SinusoidRate",
    "StepRate",
    "PiecewiseLinearRate",
    "SumRate",
    "PriceDistribution",
    "LomaxPrice",
    "EmpiricalPrice",
    "AtomicPrice",
    "MixturePrice",
    "TaskClass",
    "ProblemInstance",
    "CombinationSpace",
    "eval_rate",
    "mean_shortage",
    "enumerate_combinations",
    "successor_on_accept",
]

_EPOCH_EPS = 1e-9


# --------------------------------------------------------------------------
# arrival-rate functions
# --------------------------------------------------------------------------


class ArrivalRate:
    """Base class for a non-negative arrival-rate function (tasks/second)."""

    kind: str = ""

    def __call__(self, t):
        raise NotImplementedError

    def integral(self, a: float, b: float) -> float:
        """Exact integral of the rate over ``[a, b]``."""
        raise NotImplementedError

    def upper_bound(self, horizon: float) -> float:
        """Tight upper bound of the rate on ``[0, horizon]`` (used for thinning)."""
        raise NotImplementedError

    @property
    def lipschitz_bound(self) -> float:
        raise NotImplementedError

    def mean(self, horizon: float) -> float:
        return self.integral(0.0, horizon) / horizon

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantRate(ArrivalRate):
    rate: float
    kind: str = field(default="constant", init=False)

    def __post_init__(self):
        if not self.rate >= 0 or not math.isfinite(self.rate):
            raise ValueError(f"constant rate must be finite and >= 0, got {self.rate}")

    def __call__(self, t):
        return np.full_like(np.asarray(t, dtype=float), self.rate)[()]

    def integral(self, a, b):
        return self.rate * (b - a)

    def upper_bound(self, horizon):
        return self.rate

    @property
    def lipschitz_bound(self):
        return 0.0

    def to_dict(self):
        return {"kind": "constant", "rate": self.rate}


@dataclass(frozen=True)
class SinusoidRate(ArrivalRate):
    """``mean + amplitude * sin(2*pi*t/period + phase)``; requires amplitude <= mean."""

    mean_rate: float
    amplitude: float
    period: float
    phase: float = 0.0
    kind: str = field(default="sinusoid", init=False)

    def __post_init__(self):
        if self.period <= 0:
            raise ValueError("sinusoid period must be > 0")
        if self.amplitude < 0 or self.amplitude > self.mean_rate:
            raise ValueError("sinusoid needs 0 <= amplitude <= mean_rate so the rate stays >= 0")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return (self.mean_rate + self.amplitude * np.sin(2 * np.pi * t / self.period + self.phase))[()]

    def integral(self, a, b):
        w = 2 * np.pi / self.period
        osc = (math.cos(w * a + self.phase) - math.cos(w * b + self.phase)) / w
        return self.mean_rate * (b - a) + self.amplitude * osc

    def upper_bound(self, horizon):
        return self.mean_rate + self.amplitude

    @property
    def lipschitz_bound(self):
        return self.amplitude * 2 * np.pi / self.period

    def to_dict(self):
        return {"kind": "sinusoid", "mean": self.mean_rate, "amplitude": self.amplitude,
                "period": self.period, "phase": self.phase}


@dataclass(frozen=True)
class StepRate(ArrivalRate):
    """Rate ``before`` on ``[0, switch)`` and ``after`` from ``switch`` onwards.

    A hard step is not Lipschitz, so ``lipschitz_bound`` is infinite unless the
    two levels coincide.
    """

    before: float
    after: float
    switch: float
    kind: str = field(default="step", init=False)

    def __post_init__(self):
        if self.before < 0 or self.after < 0:
            raise ValueError("step rates must be >= 0")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t < self.switch, self.before, self.after)[()]

    def integral(self, a, b):
        s = min(max(self.switch, a), b)
        return self.before * (s - a) + self.after * (b - s)

    def upper_bound(self, horizon):
        if self.switch >= horizon:
            return self.before
        if self.switch <= 0:
            return self.after
        return max(self.before, self.after)

    @property
    def lipschitz_bound(self):
        return 0.0 if self.before == self.after else math.inf

    def to_dict(self):
        return {"kind": "step", "before": self.before, "after": self.after, "switch": self.switch}


@dataclass(frozen=True)
class PiecewiseLinearRate(ArrivalRate):
    """Linear interpolation through ``(times[i], rates[i])``, constant outside."""

    times: tuple
    rates: tuple
    kind: str = field(default="piecewise_linear", init=False)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        r = np.asarray(self.rates, dtype=float)
        if t.ndim != 1 or t.shape != r.shape or t.size < 1:
            raise ValueError("times and rates must be equal-length 1-d sequences")
        if np.any(np.diff(t) <= 0):
            raise ValueError("piecewise-linear breakpoints must be strictly increasing")
        if np.any(r < 0) or not np.all(np.isfinite(r)):
            raise ValueError("piecewise-linear rates must be finite and >= 0")
        object.__setattr__(self, "times", tuple(float(x) for x in t))
        object.__setattr__(self, "rates", tuple(float(x) for x in r))

    def __call__(self, t):
        return np.interp(np.asarray(t, dtype=float), self.times, self.rates)[()]

    def _knots(self, a, b):
        inner = [x for x in self.times if a < x < b]
        return np.array([a, *inner, b])

    def integral(self, a, b):
        x = self._knots(a, b)
        y = self(x)
        return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2))

    def upper_bound(self, horizon):
        return float(np.max(self(self._knots(0.0, horizon))))

    @property
    def lipschitz_bound(self):
        if len(self.times) < 2:
            return 0.0
        return float(np.max(np.abs(np.diff(self.rates) / np.diff(self.times))))

    def to_dict(self):
        return {"kind": "piecewise_linear", "times": list(self.times), "rates": list(self.rates)}


@dataclass(frozen=True)
class SumRate(ArrivalRate):
    """Pointwise sum of several rate functions."""

    components: tuple
    kind: str = field(default="sum", init=False)

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))

    def __call__(self, t):
        return sum(np.asarray(c(t), dtype=float) for c in self.components)[()]

    def integral(self, a, b):
        return sum(c.integral(a, b) for c in self.components)

    def upper_bound(self, horizon):
        return sum(c.upper_bound(horizon) for c in self.components)

    @property
    def lipschitz_bound(self):
        return sum(c.lipschitz_bound for c in self.components)

    def to_dict(self):
        return {"kind": "sum", "components": [c.to_dict() for c in self.components]}


def eval_rate(f: ArrivalRate, t: float, horizon: float | None = None) -> float:
    """Evaluate an arrival-rate function at a single time in ``[0, horizon]``."""
    if t < 0 or (horizon is not None and t > horizon):
        raise ValueError(f"time {t} outside the planning window [0, {horizon}]")
    return float(f(t))


# --------------------------------------------------------------------------
# price distributions
# --------------------------------------------------------------------------


class PriceDistribution:
    """Non-negative price distribution with a mean-shortage function.

    ``shortage(p)`` is ``int_p^inf (1 - F(y)) dy``. For ``p < 0`` it is extended
    as ``mean - p`` (F vanishes on the negative axis), which is what a Bellman
    backup needs when a threshold happens to be negative.
    """

    kind: str = ""

    def cdf(self, p):
        raise NotImplementedError

    def shortage(self, p):
        raise NotImplementedError

    @property
    def mean(self) -> float:
        return float(self.shortage(0.0))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class LomaxPrice(PriceDistribution):
    shape: float
    scale: float
    kind: str = field(default="lomax", init=False)

    def __post_init__(self):
        if self.shape <= 1:
            raise ValueError(f"Lomax shape must be > 1 for a finite mean, got {self.shape}")
        if self.scale <= 0:
            raise ValueError("Lomax scale must be > 0")

    def cdf(self, p):
        p = np.asarray(p, dtype=float)
        return np.where(p < 0, 0.0, -np.expm1(-self.shape * np.log1p(np.maximum(p, 0) / self.scale)))[()]

    def shortage(self, p):
        p = np.asarray(p, dtype=float)
        m = self.scale / (self.shape - 1)
        tail = m * np.power(1.0 + np.maximum(p, 0.0) / self.scale, 1.0 - self.shape)
        return np.where(p < 0, m - p, tail)[()]

    @property
    def mean(self):
        return self.scale / (self.shape - 1)

    def sample(self, rng, size):
        return self.scale * rng.pareto(self.shape, size)

    def to_dict(self):
        return {"kind": "lomax", "shape": self.shape, "scale": self.scale}


def _normalised(points, weights):
    x = np.asarray(points, dtype=float)
    w = np.asarray(weights, dtype=float)
    if x.ndim != 1 or x.shape != w.shape or x.size == 0:
        raise ValueError("points and weights must be equal-length, non-empty 1-d sequences")
    if np.any(np.diff(x) <= 0):
        raise ValueError("support points must be strictly increasing")
    if x[0] < 0:
        raise ValueError("prices must be >= 0")
    if np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be >= 0 with a positive total")
    return x, w / w.sum()


@dataclass(frozen=True)
class EmpiricalPrice(PriceDistribution):
    """Piecewise-linear CDF through ``(points[i], cumsum(weights)[i])``.

    ``F`` is 0 below ``points[0]`` (so the first weight is an atom there), and
    linear between consecutive support points.
    """

    points: tuple
    weights: tuple
    kind: str = field(default="empirical", init=False)

    def __post_init__(self):
        x, w = _normalised(self.points, self.weights)
        object.__setattr__(self, "points", tuple(x.tolist()))
        object.__setattr__(self, "weights", tuple(w.tolist()))
        c = np.minimum(np.cumsum(w), 1.0)
        c[-1] = 1.0
        s = 1.0 - c
        # tail[i] = int_{x_i}^inf (1 - F)
        seg = np.diff(x) * (s[:-1] + s[1:]) / 2
        tail = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])
        object.__setattr__(self, "_x", x)
        object.__setattr__(self, "_c", c)
        object.__setattr__(self, "_tail", tail)

    def cdf(self, p):
        p = np.asarray(p, dtype=float)
        return np.where(p < self._x[0], 0.0, np.interp(p, self._x, self._c))[()]

    def shortage(self, p):
        p = np.asarray(p, dtype=float)
        x, tail = self._x, self._tail
        i = np.clip(np.searchsorted(x, p, side="right"), 1, len(x) - 1) if len(x) > 1 else None
        below = tail[0] + (x[0] - p)
        if len(x) == 1:
            return np.where(p < x[0], below, 0.0)[()]
        s_p = 1.0 - np.interp(p, x, self._c)
        s_i = 1.0 - self._c[i]
        inside = tail[i] + (x[i] - p) * (s_p + s_i) / 2
        out = np.where(p < x[0], below, np.where(p >= x[-1], 0.0, inside))
        return out[()]

    def sample(self, rng, size):
        u = rng.random(size)
        return np.where(u <= self._c[0], self._x[0], np.interp(u, self._c, self._x))

    def to_dict(self):
        return {"kind": "empirical", "points": list(self.points), "weights": list(self.weights)}


@dataclass(frozen=True)
class AtomicPrice(PriceDistribution):
    """Purely discrete price distribution (step CDF) on ``points``."""

    points: tuple
    weights: tuple
    kind: str = field(default="atomic", init=False)

    def __post_init__(self):
        x, w = _normalised(self.points, self.weights)
        object.__setattr__(self, "points", tuple(x.tolist()))
        object.__setattr__(self, "weights", tuple(w.tolist()))

    def cdf(self, p):
        p = np.asarray(p, dtype=float)
        x = np.asarray(self.points)
        return np.sum(np.asarray(self.weights) * (x <= p[..., None]), axis=-1)[()]

    def shortage(self, p):
        p = np.asarray(p, dtype=float)
        x = np.asarray(self.points)
        return np.sum(np.asarray(self.weights) * np.maximum(x - p[..., None], 0.0), axis=-1)[()]

    def sample(self, rng, size):
        return rng.choice(np.asarray(self.points), size=size, p=np.asarray(self.weights))

    def to_dict(self):
        return {"kind": "atomic", "points": list(self.points), "weights": list(self.weights)}


@dataclass(frozen=True)
class MixturePrice(PriceDistribution):
    components: tuple
    weights: tuple
    kind: str = field(default="mixture", init=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(self.components) != w.size or w.size == 0 or np.any(w < 0) or w.sum() <= 0:
            raise ValueError("mixture needs one non-negative weight per component")
        object.__setattr__(self, "components", tuple(self.components))
        object.__setattr__(self, "weights", tuple((w / w.sum()).tolist()))

    def cdf(self, p):
        return sum(w * c.cdf(p) for c, w in zip(self.components, self.weights))

    def shortage(self, p):
        return sum(w * c.shortage(p) for c, w in zip(self.components, self.weights))

    def sample(self, rng, size):
        which = rng.choice(len(self.components), size=size, p=np.asarray(self.weights))
        out = np.empty(size)
        for j, c in enumerate(self.components):
            sel = which == j
            out[sel] = c.sample(rng, int(sel.sum()))
        return out

    def to_dict(self):
        return {"kind": "mixture", "weights": list(self.weights),
                "components": [c.to_dict() for c in self.components]}


def mean_shortage(d: PriceDistribution, p: float) -> float:
    """Expected excess ``E[(X - p)^+]`` of a price draw over ``p >= 0``."""
    if p < 0:
        raise ValueError("mean shortage is defined for p >= 0")
    return float(d.shortage(p))


# --------------------------------------------------------------------------
# instance and combination space
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TaskClass:
    name: str
    service_rate: float
    arrival: ArrivalRate
    price: PriceDistribution

    def __post_init__(self):
        if not self.service_rate > 0:
            raise ValueError(f"class {self.name!r}: service rate must be > 0")


@dataclass(frozen=True)
class ProblemInstance:
    """Planning problem. Epochs are ``t_i = i*dt`` with the last one clamped to
    ``horizon``; ``n_epochs`` counts intervals, so there are ``n_epochs + 1``
    decision epochs including the horizon."""

    classes: tuple
    n_servers: int
    horizon: float
    dt: float

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if not self.classes:
            raise ValueError("at least one task class is required")
        if self.n_servers < 1:
            raise ValueError("n_servers must be >= 1")
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not self.horizon > 0:
            raise ValueError("horizon must be > 0")

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def n_epochs(self) -> int:
        return int(math.ceil(self.horizon / self.dt - _EPOCH_EPS))

    @property
    def epoch_times(self) -> np.ndarray:
        t = np.arange(self.n_epochs + 1) * self.dt
        t[-1] = self.horizon
        return t

    @property
    def service_rates(self) -> np.ndarray:
        return np.array([c.service_rate for c in self.classes])

    def rate(self, k: int, t: float) -> float:
        return eval_rate(self.classes[k].arrival, t, self.horizon)

    def rates_at(self, t) -> np.ndarray:
        """Arrival rates of every class at times ``t``; shape ``t.shape + (K,)``."""
        t = np.asarray(t, dtype=float)
        return np.stack([np.broadcast_to(c.arrival(t), t.shape) for c in self.classes], axis=-1)

    def mean_rates(self) -> np.ndarray:
        return np.array([c.arrival.mean(self.horizon) for c in self.classes])

    def with_dt(self, dt: float) -> "ProblemInstance":
        return replace(self, dt=dt)

    def epoch_of(self, t: float) -> int:
        """Latest epoch index whose time is <= t."""
        return min(int(t / self.dt + _EPOCH_EPS), self.n_epochs)


def enumerate_combinations(n_servers: int, n_classes: int) -> list[tuple[int, ...]]:
    """All busy-server vectors with total at most ``n_servers``, lexicographic."""
    if n_servers < 1 or n_classes < 1:
        raise ValueError("n_servers and n_classes must be >= 1")
    out = []

    def rec(prefix, budget, depth):
        if depth == n_classes:
            out.append(tuple(prefix))
            return
        for v in range(budget + 1):
            prefix.append(v)
            rec(prefix, budget - v, depth + 1)
            prefix.pop()

    rec([], n_servers, 0)
    return out


def successor_on_accept(n: Sequence[int], k: int, n_servers: int) -> tuple[int, ...]:
    if sum(n) >= n_servers:
        raise ValueError(f"cannot accept into {tuple(n)}: all {n_servers} servers busy")
    out = list(n)
    out[k] += 1
    return tuple(out)


class CombinationSpace:
    """Indexed set of combinations with vectorised helpers.

    ``counts[i]`` is the i-th combination (lexicographic order); ``accept_index``
    maps ``(i, k)`` to the index after accepting class ``k`` (``-1`` when full).
    """

    def __init__(self, n_servers: int, n_classes: int):
        self.n_servers = n_servers
        self.n_classes = n_classes
        self.counts = _lex_combinations(n_servers, n_classes)
        self.size = len(self.counts)
        self.totals = self.counts.sum(axis=1)
        self.full = self.totals >= n_servers
        self._strides = (n_servers + 1) ** np.arange(n_classes - 1, -1, -1, dtype=np.int64)
        keys = self.counts @ self._strides
        self._keys = keys
        self.index_of = {tuple(int(v) for v in row): i for i, row in enumerate(self.counts)}
        acc = np.full((self.size, n_classes), -1, dtype=np.int64)
        for k in range(n_classes):
            ok = ~self.full
            acc[ok, k] = self._lookup(keys[ok] + self._strides[k])
        self.accept_index = acc

    def _lookup(self, keys: np.ndarray) -> np.ndarray:
        # keys are sorted because lexicographic order matches the mixed-radix key
        return np.searchsorted(self._keys, keys)

    def index(self, counts: Sequence[int]) -> int:
        return self.index_of[tuple(counts)]

    def n_transition_pairs(self) -> int:
        """Number of (n, n') pairs with n' <= n componentwise."""
        return math.comb(self.n_servers + 2 * self.n_classes, 2 * self.n_classes)

    def transition_blocks(self, service_rates, dt: float, rows_per_block: int = 200_000):
        """Yield ``(rows, cols, probs)`` of the completion dynamics over ``dt``.

        Each busy server of class k finishes independently with probability
        ``1 - exp(-mu_k dt)``, so the successor distribution is a product of
        binomials over classes; only ``n' <= n`` componentwise is enumerated.
        """
        mats = [binomial_completion_matrix(self.n_servers, mu, dt) for mu in service_rates]
        radix = self.counts + 1
        per_row = np.prod(radix, axis=1)
        start = 0
        while start < self.size:
            stop = start
            acc = 0
            while stop < self.size and (acc == 0 or acc + per_row[stop] <= rows_per_block):
                acc += per_row[stop]
                stop += 1
            rows = np.repeat(np.arange(start, stop), per_row[start:stop])
            offsets = np.arange(rows.size) - np.repeat(np.cumsum(per_row[start:stop]) - per_row[start:stop],
                                                       per_row[start:stop])
            n = self.counts[rows]
            r = radix[rows]
            succ = np.empty_like(n)
            prob = np.ones(rows.size)
            rem = offsets
            for k in range(self.n_classes - 1, -1, -1):
                drop = rem % r[:, k]
                rem = rem // r[:, k]
                succ[:, k] = n[:, k] - drop
                prob *= mats[k][n[:, k], succ[:, k]]
            yield rows, self._lookup(succ @ self._strides), prob
            start = stop

    def transition_matrix(self, service_rates, dt: float):
        """Sparse row-stochastic matrix of completions over one interval."""
        from scipy import sparse

        rows, cols, vals = [], [], []
        for r, c, p in self.transition_blocks(service_rates, dt):
            rows.append(r)
            cols.append(c)
            vals.append(p)
        return sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.size, self.size),
        )


def binomial_completion_matrix(n_max: int, mu: float, dt: float) -> np.ndarray:
    """``B[n, n']``: probability that ``n`` busy class servers become ``n'``."""
    finish = -math.expm1(-mu * dt)
    stay = math.exp(-mu * dt)
    b = np.zeros((n_max + 1, n_max + 1))
    for n in range(n_max + 1):
        for m in range(n + 1):
            b[n, m] = math.comb(n, n - m) * finish ** (n - m) * stay ** m
    return b


def _lex_combinations(n_servers: int, n_classes: int) -> np.ndarray:
    grids = np.indices((n_servers + 1,) * n_classes).reshape(n_classes, -1).T
    return np.ascontiguousarray(grids[grids.sum(axis=1) <= n_servers], dtype=np.int64)
