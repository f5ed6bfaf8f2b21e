"""SVG figures for experiment outputs (matplotlib, non-interactive backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed hash salt keeps SVG element ids stable between runs
plt.rcParams["svg.hashsalt"] = "taskadmit"
plt.rcParams["svg.fonttype"] = "none"

LABELS = {
    "vi_no_abstr": "VI No Abstr.",
    "vi_order_stat_abstr": "VI Order Stat. Abstr.",
    "vi_stationary_abstr": "VI Stationary Sol. Abstr.",
    "vi_random_abstr": "VI Random Abstr.",
    "stationary": "Stationary Sol.",
    "grid_search": "Grid Search",
    "vi_avg_class": "VI Avg. Class",
    "accept_all": "Accept All",
    "reject_all": "Reject All",
}


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_reward_vs_abstractions(summary: list[dict], path: str | Path, title: str = "") -> Path:
    """Mean reward with +-SE error bars against |N_A|; methods without an
    abstraction count are drawn as horizontal bands."""
    done = [r for r in summary if r["status"] == "ok"]
    sizes = sorted({int(r["n_abstractions"]) for r in done if r["n_abstractions"] != ""})
    fig, ax = plt.subplots(figsize=(7, 4.5))
    x_span = (min(sizes), max(sizes)) if sizes else (1, 2)
    for method in dict.fromkeys(r["method"] for r in done):
        rows = [r for r in done if r["method"] == method]
        label = LABELS.get(method, method)
        if rows[0]["n_abstractions"] == "":
            m, se = float(rows[0]["mean"]), float(rows[0]["se"])
            line, = ax.plot(x_span, [m, m], label=label)
            ax.fill_between(x_span, m - se, m + se, color=line.get_color(), alpha=0.2)
        else:
            rows.sort(key=lambda r: int(r["n_abstractions"]))
            ax.errorbar([int(r["n_abstractions"]) for r in rows], [float(r["mean"]) for r in rows],
                        yerr=[float(r["se"]) for r in rows], marker="o", capsize=3, label=label)
    if sizes:
        ax.set_xscale("log")
    ax.set_xlabel("number of abstract states |N_A|")
    ax.set_ylabel("mean total reward")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, Path(path))


def plot_solve_times(summary: list[dict], path: str | Path, title: str = "") -> Path:
    done = [r for r in summary if r["status"] == "ok"]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for method in dict.fromkeys(r["method"] for r in done):
        rows = [r for r in done if r["method"] == method]
        label = LABELS.get(method, method)
        if rows[0]["n_abstractions"] == "":
            ax.axhline(max(float(rows[0]["solve_time_s"]), 1e-3), label=label, color=None)
        else:
            rows.sort(key=lambda r: int(r["n_abstractions"]))
            ax.plot([int(r["n_abstractions"]) for r in rows],
                    [max(float(r["solve_time_s"]), 1e-3) for r in rows], marker="o", label=label)
    ax.set_yscale("log")
    ax.set_xlabel("number of abstract states |N_A|")
    ax.set_ylabel("computation time (s)")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, Path(path))


def plot_arrival_rates(instance, path: str | Path, points: int = 600) -> Path:
    t = np.linspace(0.0, instance.horizon, points)
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for cls in instance.classes:
        ax.plot(t / 3600.0, cls.arrival(t), label=cls.name)
    ax.set_xlabel("time (h)")
    ax.set_ylabel("arrival rate (tasks/s)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, Path(path))


def plot_dt_sweep(rows: list[dict], path: str | Path, title: str = "") -> Path:
    rows = sorted(rows, key=lambda r: float(r["dt"]))
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar([float(r["dt"]) for r in rows], [float(r["mean"]) for r in rows],
                yerr=[float(r["se"]) for r in rows], marker="o", capsize=3)
    ax.set_xscale("log", base=2)
    ax.set_xlabel("time step dt (s)")
    ax.set_ylabel("mean total reward")
    ax.set_title(title)
    fig.tight_layout()
    return _save(fig, Path(path))
