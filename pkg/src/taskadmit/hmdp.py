"""Exact finite-horizon value iteration for the discretised admission problem.

The optimal value is piecewise-linear in the task price, so the whole policy is
captured by two tables: the value of rejecting, ``Q(n, rej, t_i)``, and the
critical price ``p_cr(n, k, t_i)`` above which a class-k task is accepted.
"""
from __future__ import annotations

import math
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .domain import CombinationSpace, ProblemInstance
from .errors import BudgetExceeded, MemoryBudgetExceeded

ACCEPT = "accept"
REJECT = "reject"
ACCEPT_DISABLED = None  # critical_price() result for a combination with no free server

DEFAULT_MEMORY_BUDGET = 3 * 2**30
TABLE_MAGIC = b"STAQ"
TABLE_VERSION = 1
_HEADER = struct.Struct("<4sIIIQdQ")
_DEADLINE_CHECK_EVERY = 512


@dataclass(frozen=True)
class StateView:
    """Ground state seen by a policy: busy counts, arriving class (``None`` when
    nothing arrived), its price and the epoch index."""

    counts: tuple
    k_plus: int | None
    price: float
    epoch: int

    def __post_init__(self):
        if self.k_plus is None and self.price != 0:
            raise ValueError("a state without an arrival must carry price 0")


@dataclass
class SolvedTables:
    """``reject_q[i, n]`` and ``critical_price[i, n, k]`` are stored epoch-major;
    epoch ``n_epochs`` is the horizon. Full combinations carry 0 in
    ``critical_price`` and are never looked up (accept is disabled there)."""

    reject_q: np.ndarray
    critical_price: np.ndarray
    dt: float
    n_servers: int
    n_classes: int
    instance: ProblemInstance | None = None
    solve_seconds: float = 0.0
    _space: CombinationSpace | None = field(default=None, repr=False)

    @property
    def n_epochs(self) -> int:
        return self.reject_q.shape[0] - 1

    @property
    def space(self) -> CombinationSpace:
        if self._space is None:
            self._space = CombinationSpace(self.n_servers, self.n_classes)
        return self._space

    def epoch_of(self, t: float) -> int:
        return min(int(t / self.dt + 1e-9), self.n_epochs)


# --------------------------------------------------------------------------
# model probabilities
# --------------------------------------------------------------------------


def prob_fin(service_rate: float, t: float, horizon: float) -> float:
    """Probability that a task started at ``t`` completes before the horizon."""
    if t > horizon:
        raise ValueError("t must not exceed the horizon")
    return -math.expm1(-(horizon - t) * service_rate)


def prob_no_arrival(instance: ProblemInstance, epoch: int) -> float:
    t = instance.epoch_times[epoch]
    return math.exp(-instance.dt * float(np.sum(instance.rates_at(t))))


def prob_class_arrival(instance: ProblemInstance, k: int, epoch: int) -> float:
    rates = instance.rates_at(instance.epoch_times[epoch])
    total = float(np.sum(rates))
    if total <= 0:
        return 0.0
    return float(rates[k]) / total * -math.expm1(-instance.dt * total)


def server_transition_prob(n_k: int, n_k_next: int, service_rate: float, dt: float) -> float:
    """Probability that ``n_k`` busy class-k servers leave ``n_k_next`` busy after ``dt``."""
    if n_k_next > n_k or n_k_next < 0:
        return 0.0
    done = n_k - n_k_next
    return math.comb(n_k, done) * (-math.expm1(-service_rate * dt)) ** done * math.exp(
        -service_rate * n_k_next * dt)


def _arrival_table(instance: ProblemInstance) -> np.ndarray:
    """Per-epoch class arrival probabilities, rates taken at the left endpoint."""
    rates = instance.rates_at(instance.epoch_times[:-1])
    total = rates.sum(axis=1, keepdims=True)
    any_arrival = -np.expm1(-instance.dt * total)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(total > 0, rates / total * any_arrival, 0.0)
    return out


def _fin_table(instance: ProblemInstance) -> np.ndarray:
    remaining = instance.horizon - instance.epoch_times
    return -np.expm1(-remaining[:, None] * instance.service_rates[None, :])


# --------------------------------------------------------------------------
# single backups (reference form)
# --------------------------------------------------------------------------


def backup_reject_q(q_next: np.ndarray, pcr_next: np.ndarray, instance: ProblemInstance,
                    space: CombinationSpace, counts: Sequence[int], epoch: int) -> float:
    """Reject value of one combination at ``epoch`` from the tables at ``epoch + 1``.

    Sums over successor combinations (product of per-class completion
    probabilities) and over the arrival outcome at the next epoch.
    """
    counts = tuple(counts)
    mus = instance.service_rates
    arrive = _arrival_table(instance)[epoch]
    fin_next = _fin_table(instance)[epoch + 1]
    total = 0.0
    for succ in np.ndindex(*(c + 1 for c in counts)):
        p = 1.0
        for k, (a, b) in enumerate(zip(counts, succ)):
            p *= server_transition_prob(a, b, mus[k], instance.dt)
        if p == 0.0:
            continue
        j = space.index(succ)
        value = q_next[j]
        if not space.full[j]:
            for k, cls in enumerate(instance.classes):
                value += arrive[k] * fin_next[k] * float(cls.price.shortage(pcr_next[j, k]))
        total += p * value
    return total


def critical_price(q_now: np.ndarray, instance: ProblemInstance, space: CombinationSpace,
                   counts: Sequence[int], k: int, epoch: int):
    """Threshold price for accepting class ``k`` at ``counts``; ``ACCEPT_DISABLED``
    when no server is free."""
    i = space.index(counts)
    if space.full[i]:
        return ACCEPT_DISABLED
    if epoch >= instance.n_epochs:
        return 0.0
    fin = prob_fin(instance.classes[k].service_rate, instance.epoch_times[epoch], instance.horizon)
    return max((q_now[i] - q_now[space.accept_index[i, k]]) / fin, 0.0)


# --------------------------------------------------------------------------
# full solve
# --------------------------------------------------------------------------


def table_bytes(n_combinations: int, n_classes: int, n_epochs: int) -> int:
    return 8 * n_combinations * (n_epochs + 1) * (1 + n_classes)


def sizing_report(instance: ProblemInstance, space: CombinationSpace | None = None) -> dict:
    m = space.size if space is not None else math.comb(instance.n_servers + instance.n_classes,
                                                       instance.n_classes)
    pairs = math.comb(instance.n_servers + 2 * instance.n_classes, 2 * instance.n_classes)
    return {
        "combinations": m,
        "epochs": instance.n_epochs + 1,
        "transition_pairs": pairs,
        "table_bytes": table_bytes(m, instance.n_classes, instance.n_epochs),
        "transition_bytes": 40 * pairs,
    }


def _check_deadline(deadline, what):
    if deadline is not None and time.monotonic() > deadline:
        raise BudgetExceeded(f"{what} exceeded its compute-time budget")


def _allocate(shape, spill_dir, name):
    if spill_dir is None:
        return np.zeros(shape)
    path = Path(spill_dir) / f"{name}.npy"
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.lib.format.open_memmap(path, mode="w+", dtype=np.float64, shape=shape)
    arr[-1] = 0.0
    return arr


def solve(instance: ProblemInstance, memory_budget: int = DEFAULT_MEMORY_BUDGET,
          deadline: float | None = None, spill_dir: str | Path | None = None) -> SolvedTables:
    """Backward induction over all epochs.

    ``deadline`` is a ``time.monotonic()`` value; ``spill_dir`` streams the
    tables to ``.npy`` memmaps so only the transition matrix must fit in
    ``memory_budget``.
    """
    started = time.monotonic()
    sizes = sizing_report(instance)
    need = sizes["transition_bytes"] + (0 if spill_dir else sizes["table_bytes"])
    if need > memory_budget:
        raise MemoryBudgetExceeded(
            "exact solve needs ~{:.2f} GiB (combinations={combinations}, epochs={epochs}, "
            "transition pairs={transition_pairs}) but the budget is {:.2f} GiB".format(
                need / 2**30, memory_budget / 2**30, **sizes))
    space = CombinationSpace(instance.n_servers, instance.n_classes)
    transitions = space.transition_matrix(instance.service_rates, instance.dt)
    shortages = [c.price.shortage for c in instance.classes]
    arrive = _arrival_table(instance)
    fin = _fin_table(instance)
    n_ep, m, n_cls = instance.n_epochs, space.size, instance.n_classes

    q = _allocate((n_ep + 1, m), spill_dir, "reject_q")
    pcr = _allocate((n_ep + 1, m, n_cls), spill_dir, "critical_price")
    open_ = ~space.full
    acc = np.where(space.accept_index >= 0, space.accept_index, 0)
    q_next = np.zeros(m)
    pcr_next = np.zeros((m, n_cls))
    for i in range(n_ep - 1, -1, -1):
        if i % _DEADLINE_CHECK_EVERY == 0:
            _check_deadline(deadline, "exact value iteration")
        bonus = np.zeros(m)
        for k in range(n_cls):
            w = arrive[i, k] * fin[i + 1, k]
            if w > 0:
                bonus += w * shortages[k](pcr_next[:, k])
        bonus[space.full] = 0.0
        q_now = transitions @ (q_next + bonus)
        np.maximum(q_now, 0.0, out=q_now)
        p_now = np.zeros((m, n_cls))
        diff = q_now[:, None] - q_now[acc]
        p_now[open_] = np.maximum(diff[open_] / fin[i][None, :], 0.0)
        q[i] = q_now
        pcr[i] = p_now
        q_next, pcr_next = q_now, p_now
    if isinstance(q, np.memmap):
        q.flush()
        pcr.flush()
    return SolvedTables(reject_q=q, critical_price=pcr, dt=instance.dt, n_servers=instance.n_servers,
                        n_classes=n_cls, instance=instance,
                        solve_seconds=time.monotonic() - started, _space=space)


# --------------------------------------------------------------------------
# policy and value from tables
# --------------------------------------------------------------------------


def decide(tables: SolvedTables, state: StateView) -> str:
    """Threshold rule: accept iff a task arrived, a server is free and the price
    reaches the critical price (ties accept)."""
    if state.k_plus is None or sum(state.counts) >= tables.n_servers:
        return REJECT
    i = tables.space.index(state.counts)
    return ACCEPT if state.price >= tables.critical_price[state.epoch, i, state.k_plus] else REJECT


def value_at(tables: SolvedTables, state: StateView) -> float:
    if tables.instance is None:
        raise ValueError("value_at needs tables carrying their problem instance")
    i = tables.space.index(state.counts)
    q = float(tables.reject_q[state.epoch, i])
    if decide(tables, state) == REJECT:
        return q
    inst = tables.instance
    k = state.k_plus
    fin = prob_fin(inst.classes[k].service_rate, inst.epoch_times[state.epoch], inst.horizon)
    return fin * (state.price - float(tables.critical_price[state.epoch, i, k])) + q


# --------------------------------------------------------------------------
# binary dump
# --------------------------------------------------------------------------


def write_tables(tables: SolvedTables, path: str | Path) -> Path:
    """Little-endian dump: header, reject-Q block ``[epoch][combination]``, then
    critical-price block ``[epoch][combination][class]``."""
    path = Path(path)
    m = tables.reject_q.shape[1]
    header = _HEADER.pack(TABLE_MAGIC, TABLE_VERSION, tables.n_classes, tables.n_servers,
                          tables.n_epochs + 1, float(tables.dt), m)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(tables.reject_q, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(tables.critical_price, dtype="<f8").tobytes())
    return path


def read_tables(path: str | Path, instance: ProblemInstance | None = None) -> SolvedTables:
    raw = Path(path).read_bytes()
    magic, version, n_cls, n_serv, n_ep, dt, m = _HEADER.unpack_from(raw)
    if magic != TABLE_MAGIC:
        raise ValueError(f"{path}: not a table dump (magic {magic!r})")
    if version != TABLE_VERSION:
        raise ValueError(f"{path}: unsupported table version {version}")
    if m != math.comb(n_serv + n_cls, n_cls):
        raise ValueError(f"{path}: combination count {m} inconsistent with header")
    off = _HEADER.size
    q = np.frombuffer(raw, dtype="<f8", count=n_ep * m, offset=off).reshape(n_ep, m)
    off += 8 * n_ep * m
    p = np.frombuffer(raw, dtype="<f8", count=n_ep * m * n_cls, offset=off).reshape(n_ep, m, n_cls)
    if instance is not None and (instance.n_servers != n_serv or instance.n_classes != n_cls
                                 or instance.n_epochs + 1 != n_ep or instance.dt != dt):
        raise ValueError("table dump does not match the given instance")
    return SolvedTables(reject_q=q.copy(), critical_price=p.copy(), dt=dt, n_servers=n_serv,
                        n_classes=n_cls, instance=instance)
