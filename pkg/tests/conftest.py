import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from taskadmit.domain import (AtomicPrice, ConstantRate, LomaxPrice, PiecewiseLinearRate,  # noqa: E402
                              ProblemInstance, SinusoidRate, TaskClass)

H_DAY = 28800.0


def small_sinusoid(dt=0.5):
    """Synthetic Small with the bundled (reconstructed) sinusoid rates."""
    spec = [("slow", 1 / 2000, 1600, 0.0024), ("medium", 1 / 1000, 900, 0.0048), ("fast", 1 / 500, 400, 0.0096)]
    classes = [TaskClass(n, mu, SinusoidRate(r, r, H_DAY, -math.pi / 2), LomaxPrice(3, sc))
               for n, mu, sc, r in spec]
    return ProblemInstance(classes, 10, H_DAY, dt)


def random_tiny_instance(rng: np.random.Generator):
    """At most 3 servers, 2 classes, 6 epochs, atomic prices."""
    n_cls = int(rng.integers(1, 3))
    n_serv = int(rng.integers(1, 4))
    n_ep = int(rng.integers(1, 7))
    dt = float(rng.uniform(0.3, 2.0))
    # sometimes a short last interval, to exercise the clamped final epoch
    horizon = dt * n_ep - (float(rng.uniform(0, 0.9 * dt)) if rng.random() < 0.4 else 0.0)
    classes = []
    for k in range(n_cls):
        mu = float(rng.uniform(0.05, 1.5))
        kind = rng.integers(0, 3)
        if kind == 0:
            rate = ConstantRate(float(rng.uniform(0, 1.5)))
        elif kind == 1:
            m = float(rng.uniform(0.1, 1.5))
            rate = SinusoidRate(m, float(rng.uniform(0, m)), float(rng.uniform(1, 10)), float(rng.uniform(0, 6)))
        else:
            rate = PiecewiseLinearRate((0.0, horizon), (float(rng.uniform(0, 1.5)), float(rng.uniform(0, 1.5))))
        n_atoms = int(rng.integers(1, 4))
        pts = np.sort(rng.choice(np.arange(0, 40), size=n_atoms, replace=False)).astype(float)
        w = rng.uniform(0.1, 1.0, n_atoms)
        classes.append(TaskClass(f"c{k}", mu, rate, AtomicPrice(tuple(pts), tuple(w))))
    return ProblemInstance(classes, n_serv, horizon, dt)


@pytest.fixture
def small():
    return small_sinusoid(4.0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
