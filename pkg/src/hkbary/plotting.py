"""Headless figure rendering for the CLI report paths."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def render_curves(path, x: np.ndarray, curves: dict, title: str = "") -> None:
    """One-panel line plot of named mass profiles over a 1D grid."""
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    for label, y in curves.items():
        style = "-" if label not in ("mu1", "mu2") else "--"
        ax.plot(x, y, style, label=label, linewidth=1.4)
    ax.set_xlabel("x")
    ax.set_ylabel("mass")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_scatter(path, layers: list, title: str = "") -> None:
    """Scatter plot of weighted 2D atoms; ``layers`` is (label, points, masses)."""
    fig, ax = plt.subplots(figsize=(6.0, 6.0))
    for label, pts, masses in layers:
        if len(masses) == 0:
            continue
        scale = 200.0 / max(float(np.max(masses)), 1e-30)
        ax.scatter(pts[:, 0], pts[:, 1], s=np.asarray(masses) * scale, alpha=0.55, label=label)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_aspect("equal", adjustable="datalim")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_measures_1d(path, grid_points: np.ndarray, layers: dict, title: str = "") -> None:
    """Stem-style plot of measures given as dense mass vectors on a 1D grid."""
    x = grid_points.ravel()
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    for label, masses in layers.items():
        ax.plot(x, masses, label=label, linewidth=1.4)
    ax.set_xlabel("x")
    ax.set_ylabel("mass")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
