"""Figure rendering for the CLI report paths (file output only, Agg backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Circle  # noqa: E402


def _draw_field(ax, field):
    xmin, ymin, xmax, ymax = field["bounds"] if isinstance(field, dict) else field.bounds
    obstacles = (field["obstacles"] if isinstance(field, dict)
                 else [{"center": c.tolist(), "radius": float(r)}
                       for c, r in zip(field.centers, field.radii)])
    start = field["start"] if isinstance(field, dict) else field.start
    goal = field["goal"] if isinstance(field, dict) else field.goal
    for obs in obstacles:
        ax.add_patch(Circle(obs["center"], obs["radius"], color="0.55", zorder=1))
    ax.plot(*start, "ks", ms=8, label="start", zorder=3)
    ax.plot(*goal, "g*", ms=14, label="goal", zorder=3)
    ax.set_xlim(xmin, xmax)
    ax.set_ylim(ymin, ymax)
    ax.set_aspect("equal")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")


def save_trajectory_figure(field, trajectories, path, title=""):
    """Plot labelled (x, y) trajectories over the obstacle field.

    ``trajectories`` is a list of (label, states) pairs; states need columns
    x, y first.
    """
    fig, ax = plt.subplots(figsize=(6, 6))
    _draw_field(ax, field)
    for label, states in trajectories:
        s = np.asarray(states, dtype=float)
        ax.plot(s[:, 0], s[:, 1], lw=1.8, label=label, zorder=2)
    if title:
        ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_ensemble_figure(field, cycles, path, title=""):
    """Plot per-cycle candidate position trajectories (one color per cycle)."""
    fig, ax = plt.subplots(figsize=(6, 6))
    _draw_field(ax, field)
    cmap = plt.get_cmap("viridis")
    n = max(len(cycles), 1)
    for k, ensemble in enumerate(cycles):
        color = cmap(k / max(n - 1, 1))
        for traj in np.asarray(ensemble, dtype=float):
            ax.plot(traj[:, 0], traj[:, 1], lw=0.7, color=color, alpha=0.5, zorder=2)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_descent_figure(traces, path, title="objective per iteration"):
    """Plot transport-objective descent curves (one line per labelled trace)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, objectives in traces:
        ax.plot(np.arange(1, len(objectives) + 1), objectives, lw=1.5, label=label)
    ax.set_xlabel("iteration")
    ax.set_ylabel("objective")
    ax.set_title(title)
    if len(traces) > 1:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_summary_figure(summary_rows, path):
    """Bar chart of success rates per (task, controller) row."""
    labels = [f"{r['task']}\n{r['controller']}" for r in summary_rows]
    values = [r["success_percent"] for r in summary_rows]
    fig, ax = plt.subplots(figsize=(1.4 + 1.2 * len(labels), 4))
    ax.bar(np.arange(len(labels)), values, color="tab:blue", width=0.6)
    ax.set_xticks(np.arange(len(labels)))
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylabel("success (%)")
    ax.set_ylim(0, 100)
    for i, v in enumerate(values):
        ax.text(i, v + 1.5, f"{v:.1f}", ha="center", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
