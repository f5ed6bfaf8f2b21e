"""Decision functions consulted by the simulator.

Every policy answers ``decide(counts, k, price, t)``; feasibility (a free
server and an actual arrival) is checked before any threshold lookup, so no
policy can accept into a full system.
"""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np


class Policy:
    name = "policy"
    n_servers: int = 0

    def threshold(self, counts: tuple, k: int, t: float) -> float:
        raise NotImplementedError

    def decide(self, counts: tuple, k: int | None, price: float, t: float) -> bool:
        if k is None or sum(counts) >= self.n_servers:
            return False
        return price >= self.threshold(counts, k, t)


class TablePolicy(Policy):
    """Epoch-indexed critical prices from an exact solve; floor-to-epoch lookup."""

    name = "vi_no_abstr"

    def __init__(self, tables):
        self.tables = tables
        self.n_servers = tables.n_servers
        self._index = tables.space.index_of
        self._pcr = tables.critical_price

    def threshold(self, counts, k, t):
        return float(self._pcr[self.tables.epoch_of(t), self._index[counts], k])


class AbstractTablePolicy(Policy):
    """Thresholds of the abstract state containing the ground combination."""

    name = "vi_abstr"

    def __init__(self, tables, assignment):
        from .domain import CombinationSpace

        self.tables = tables
        self.n_servers = tables.n_servers
        self._index = CombinationSpace(tables.n_servers, tables.n_classes).index_of
        self._assignment = np.asarray(assignment)
        self._pcr = tables.critical_price

    def threshold(self, counts, k, t):
        a = self._assignment[self._index[counts]]
        return float(self._pcr[self.tables.epoch_of(t), a, k])


class StationaryPolicy(Policy):
    """Time-invariant thresholds from the average-reward solution."""

    name = "stationary"

    def __init__(self, solution):
        self.solution = solution
        self.n_servers = solution.space.n_servers
        self._index = solution.space.index_of
        self._pcr = solution.critical_price

    def threshold(self, counts, k, t):
        return float(self._pcr[self._index[counts], k])


class ClassThresholdPolicy(Policy):
    """One fixed threshold per class, whatever the occupancy."""

    name = "class_threshold"

    def __init__(self, thresholds: Sequence[float], n_servers: int, name: str | None = None):
        self.thresholds = [float(x) for x in thresholds]
        self.n_servers = n_servers
        if name:
            self.name = name

    def threshold(self, counts, k, t):
        return self.thresholds[k]


def accept_all(n_classes: int, n_servers: int) -> ClassThresholdPolicy:
    return ClassThresholdPolicy([0.0] * n_classes, n_servers, name="accept_all")


def reject_all(n_classes: int, n_servers: int) -> ClassThresholdPolicy:
    return ClassThresholdPolicy([math.inf] * n_classes, n_servers, name="reject_all")


class AverageClassPolicy(Policy):
    """Treats every arrival as the single averaged class; looks up thresholds by
    the number of busy servers."""

    name = "vi_avg_class"

    def __init__(self, tables):
        self.tables = tables
        self.n_servers = tables.n_servers
        self._pcr = tables.critical_price

    def threshold(self, counts, k, t):
        return float(self._pcr[self.tables.epoch_of(t), sum(counts), 0])


class CallablePolicy(Policy):
    """Wraps ``fn(counts, k, price, t) -> bool``; feasibility is still enforced."""

    def __init__(self, fn: Callable, n_servers: int, name: str = "callable"):
        self.fn = fn
        self.n_servers = n_servers
        self.name = name

    def decide(self, counts, k, price, t):
        if k is None or sum(counts) >= self.n_servers:
            return False
        return bool(self.fn(counts, k, price, t))
