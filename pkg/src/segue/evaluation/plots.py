"""Static figures for sweep results."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_curve(xs, series: dict, path, xlabel: str, ylabel: str = "clean test accuracy", title: str = ""):
    """One line per entry of `series` (name -> list of y values aligned with xs)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    for name, ys in series.items():
        ax.plot(xs, ys, marker="o", label=name)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_ylim(0, 1)
    if title:
        ax.set_title(title)
    if len(series) > 1:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_accuracy_vs_quality(qualities, series, path):
    return plot_curve(qualities, series, path, "JPEG quality")


def plot_accuracy_vs_rho(rhos, series, path):
    return plot_curve([r * 255 for r in rhos], series, path, "rho (x 1/255)")
