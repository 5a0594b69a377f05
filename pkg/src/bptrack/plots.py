"""Figure rendering for reports: scenario layout and metric-over-time."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["plot_scenario", "plot_metric_series", "plot_run_series"]


def _extent_ellipse(center, extent, n_pts: int = 64) -> np.ndarray:
    """Boundary of the 1-sigma ellipse of a 2x2 covariance."""
    vals, vecs = np.linalg.eigh(extent)
    angles = np.linspace(0.0, 2.0 * np.pi, n_pts)
    circle = np.stack([np.cos(angles), np.sin(angles)])
    pts = vecs @ (np.sqrt(np.maximum(vals, 0.0))[:, None] * circle)
    return center[:, None] + pts


def plot_scenario(truth, path, region=None) -> None:
    """Ground-truth trajectories with extent ellipses at appearance."""
    fig, ax = plt.subplots(figsize=(6.0, 6.0))
    cmap = plt.get_cmap("tab10")
    for i, rec in enumerate(truth):
        pos = np.array([s.position for s in rec.states])
        color = cmap(i % 10)
        ax.plot(pos[:, 0], pos[:, 1], color=color, lw=1.0,
                label=f"object {rec.id}")
        ax.plot(pos[0, 0], pos[0, 1], "o", color=color, ms=4)
        ell = _extent_ellipse(pos[0], rec.states[0].extent)
        ax.plot(ell[0], ell[1], color=color, lw=0.8, alpha=0.7)
    if region is not None:
        (x_lo, x_hi), (y_lo, y_hi) = region
        ax.set_xlim(x_lo, x_hi)
        ax.set_ylim(y_lo, y_hi)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_aspect("equal")
    ax.grid(True, alpha=0.3)
    if len(truth) <= 10:
        ax.legend(fontsize=7, loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_run_series(series, path, label: str | None = None) -> None:
    """Normalized metric and its parts over time for a single run."""
    steps = np.arange(1, len(series) + 1)
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    ax.plot(steps, [d.total for d in series], lw=1.5,
            label="total" if label is None else label)
    ax.plot(steps, [d.localization for d in series], lw=1.0, label="loc")
    ax.plot(steps, [d.miss for d in series], lw=1.0, label="miss")
    ax.plot(steps, [d.false_ for d in series], lw=1.0, label="false")
    ax.plot(steps, [d.switch for d in series], lw=1.0, label="switch")
    ax.set_xlabel("time step")
    ax.set_ylabel("normalized trajectory metric")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_metric_series(aggregates, path) -> None:
    """Mean normalized metric over time, one curve per (variant, gamma)."""
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    for agg in aggregates:
        steps = np.arange(1, agg.mean_series.shape[0] + 1)
        ax.plot(steps, agg.mean_series[:, 0], lw=1.2,
                label=f"{agg.variant}, gamma={agg.gamma:g}")
    ax.set_xlabel("time step")
    ax.set_ylabel("normalized trajectory metric")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
