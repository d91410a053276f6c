"""SVG charts rendered from the CSV artifacts. Needs matplotlib."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .plant import Y_ST


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "ddnmpc"
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})


def closed_loop_chart(trajectories, path: str | Path, tau: float = 0.02) -> None:
    """Output vs. time for one or more runs, with the optimal-output line."""
    plt = _pyplot()
    fig, (ax_y, ax_u) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    for i, traj in enumerate(trajectories):
        t = np.arange(len(traj.y)) * tau
        ax_y.plot(t, traj.y, lw=0.8, label=f"run {i}")
        ax_u.plot(t, traj.u, lw=0.6)
    ax_y.axhline(Y_ST, color="k", ls="--", lw=1.0, label=f"y_st = {Y_ST}")
    ax_y.set_ylabel("y = x2")
    ax_u.set_ylabel("u")
    ax_u.set_xlabel("time")
    ax_y.legend(fontsize="small", ncol=2)
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)


def scatter_chart(y_true, y_pred, path: str | Path, r2: float | None = None) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot(y_true, y_pred, ".", ms=1.5, alpha=0.5)
    lo, hi = float(np.min(y_true)), float(np.max(y_true))
    ax.plot([lo, hi], [lo, hi], "k--", lw=1.0)
    ax.set_xlabel("true cost")
    ax.set_ylabel("predicted cost")
    if r2 is not None:
        ax.set_title(f"R^2 = {r2:.4f}")
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)
