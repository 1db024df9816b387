"""Figure rendering for study outputs (always to files, never interactive)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

plt.rcParams.update(
    {
        "figure.figsize": (6.0, 4.2),
        "figure.dpi": 110,
        "savefig.bbox": "tight",
        "font.size": 10,
        "axes.grid": True,
        "grid.alpha": 0.3,
    }
)

__all__ = ["loglog_gap_figure", "cv_risk_figure"]


def loglog_gap_figure(path, series, title, xlabel="N", ylabel="gap"):
    """Log-log scatter of (N, value) series with their fitted power laws.

    `series` maps label -> (n_array, value_array, slope or None).
    """
    fig, ax = plt.subplots()
    for label, (ns, vals, slope) in series.items():
        ns = np.asarray(ns, dtype=float)
        vals = np.asarray(vals, dtype=float)
        keep = vals > 0
        if not np.any(keep):
            continue
        lbl = label if slope is None else f"{label} (slope {slope:.2f})"
        (line,) = ax.loglog(ns[keep], vals[keep], "o", label=lbl)
        if slope is not None and keep.sum() >= 2:
            anchor = vals[keep][0] * (ns[keep] / ns[keep][0]) ** slope
            ax.loglog(ns[keep], anchor, "--", color=line.get_color(), alpha=0.6)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def cv_risk_figure(path, n_values, means, spreads, title, ylabel="validation cross-entropy"):
    """Depth sweep of cross-validated risk with fold spread as error bars."""
    fig, ax = plt.subplots()
    ax.errorbar(n_values, means, yerr=spreads, fmt="o-", capsize=3)
    ax.set_xscale("log")
    ax.set_xticks(list(n_values))
    ax.get_xaxis().set_major_formatter(matplotlib.ticker.ScalarFormatter())
    ax.set_xlabel("N (residual steps)")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    fig.savefig(path)
    plt.close(fig)
    return Path(path)
