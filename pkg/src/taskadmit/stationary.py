"""Average-reward solution of the constant-rate, infinite-horizon variant.

Decision epochs are arrivals and completions. The semi-MDP is uniformised with
a constant ``eta < 1 / max_n total_rate(n)`` into a discrete-time MDP, whose
arrival decisions integrate out through the mean-shortage function; relative
value iteration then runs over post-decision combinations only.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .domain import CombinationSpace, ProblemInstance
from .errors import BudgetExceeded, ConvergenceError

DEFAULT_MAX_COMBINATIONS = 20_000
ETA_FRACTION = 0.9


@dataclass
class StationarySolution:
    relative_q: np.ndarray       # (M,) relative value of rejecting, 0 at the reference
    critical_price: np.ndarray   # (M, K); 0 on full combinations
    gain: float                  # average reward per second
    eta: float
    iterations: int
    mean_rates: np.ndarray
    space: CombinationSpace
    reference: int = 0
    solve_seconds: float = 0.0


def mean_rates(instance: ProblemInstance) -> np.ndarray:
    """Time-averaged arrival rate of each class over the horizon."""
    return instance.mean_rates()


def total_rate(counts, rates, service_rates) -> float:
    """Rate of the next event (arrival or completion) from combination ``counts``."""
    return float(np.sum(rates) + np.dot(counts, service_rates))


def uniformisation_constant(space: CombinationSpace, rates, service_rates) -> float:
    worst = float(np.sum(rates) + np.max(space.counts @ np.asarray(service_rates)))
    return ETA_FRACTION / worst


def uniformised_rows(space: CombinationSpace, rates, service_rates, eta: float) -> np.ndarray:
    """Dense transition rows of the uniformised chain under reject-everything.

    Used for checks: completions move to ``n - e_k`` with ``eta*mu_k*n_k``; the
    remaining mass (arrivals that are rejected, plus the fictitious
    self-transition) stays put.
    """
    m = space.size
    rows = np.zeros((m, m))
    mu = np.asarray(service_rates, dtype=float)
    for i, n in enumerate(space.counts):
        out = 0.0
        for k in range(space.n_classes):
            if n[k] > 0:
                dn = n.copy()
                dn[k] -= 1
                p = eta * mu[k] * n[k]
                rows[i, space.index(dn)] += p
                out += p
        rows[i, i] += 1.0 - out
    return rows


def solve_stationary(instance: ProblemInstance, reference: tuple | None = None,
                     tolerance: float = 1e-9, max_iter: int = 2_000_000,
                     max_combinations: int = DEFAULT_MAX_COMBINATIONS,
                     deadline: float | None = None) -> StationarySolution:
    """Relative value iteration with span stopping.

    Stops when ``span(T W - W) < tolerance * mean price`` (rate-weighted mean
    over classes). Raises ``ConvergenceError`` after ``max_iter`` sweeps.
    """
    started = time.monotonic()
    space = CombinationSpace(instance.n_servers, instance.n_classes)
    if space.size > max_combinations:
        raise BudgetExceeded(
            f"stationary solve over {space.size} combinations exceeds the limit of {max_combinations}")
    lam = mean_rates(instance)
    mu = instance.service_rates
    ref = 0 if reference is None else space.index(reference)
    counts = space.counts.astype(float)
    n_cls = instance.n_classes
    shortages = [c.price.shortage for c in instance.classes]

    eta = uniformisation_constant(space, lam, mu)
    down = np.zeros((space.size, n_cls), dtype=np.int64)
    for k in range(n_cls):
        dn = space.counts.copy()
        dn[:, k] = np.maximum(dn[:, k] - 1, 0)
        down[:, k] = [space.index(tuple(r)) for r in dn]
    acc = np.where(space.accept_index >= 0, space.accept_index, 0)
    open_ = ~space.full
    completion = eta * counts * mu[None, :]

    if np.sum(lam) <= 0:
        zeros = np.zeros(space.size)
        return StationarySolution(zeros, np.zeros((space.size, n_cls)), 0.0, eta, 0, lam, space, ref,
                                  time.monotonic() - started)

    weights = lam / lam.sum()
    scale = float(sum(w * s(0.0) for w, s in zip(weights, shortages)))
    tol = tolerance * scale
    w_vals = np.zeros(space.size)
    for it in range(1, max_iter + 1):
        if it % 4096 == 0 and deadline is not None and time.monotonic() > deadline:
            raise BudgetExceeded("stationary solve exceeded its compute-time budget")
        gap = w_vals[:, None] - w_vals[acc]
        arrival = np.zeros(space.size)
        for k in range(n_cls):
            if lam[k] > 0:
                arrival += lam[k] * shortages[k](gap[:, k])
        arrival[~open_] = 0.0
        t_w = w_vals + np.sum(completion * (w_vals[down] - w_vals[:, None]), axis=1) + eta * arrival
        delta = t_w - w_vals
        lo, hi = float(delta.min()), float(delta.max())
        w_vals = t_w - t_w[ref]
        if hi - lo < tol:
            break
    else:
        raise ConvergenceError(
            f"relative value iteration did not converge in {max_iter} sweeps (span {hi - lo:.3e}, "
            f"tolerance {tol:.3e})")

    gain = 0.5 * (lo + hi) / eta
    thresholds = np.zeros((space.size, n_cls))
    gap = w_vals[:, None] - w_vals[acc]
    thresholds[open_] = np.maximum(gap[open_], 0.0)
    return StationarySolution(w_vals, thresholds, max(gain, 0.0), eta, it, lam, space, ref,
                              time.monotonic() - started)
