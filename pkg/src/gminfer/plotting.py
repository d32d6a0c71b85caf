"""Figure helpers for the ``report`` subcommand.

Uses the non-interactive Agg backend so figures render in headless runs.
"""

import numpy as np
import matplotlib as mpl

mpl.use("Agg")

RC = {
    "font.family": "serif",
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.bbox": "tight",
}

mpl.rcParams.update(RC)

import matplotlib.pyplot as plt  # noqa: E402


def size(scale=1.0, ratio=None):
    """Figure size in inches for a fraction ``scale`` of a 6.5 in text width."""
    ratio = ratio or (np.sqrt(5.0) - 1.0) / 2.0
    w = 6.5 * scale
    return [w, w * ratio]


def new(nrows=1, ncols=1, scale=1.0, ratio=None):
    return plt.subplots(nrows=nrows, ncols=ncols, figsize=size(scale, ratio))


def save(fig, path):
    """Write ``fig`` to ``path`` (format from the suffix) and close it."""
    fig.savefig(path)
    plt.close(fig)


def plot_trajectory(rows, keys=("mmd", "modes_covered", "hq_fraction", "grad_norm_mean")):
    """One panel per metric against the step index."""
    keys = [k for k in keys if any(k in r for r in rows)]
    fig, axes = new(1, max(len(keys), 1), scale=1.0, ratio=0.3)
    axes = np.atleast_1d(axes)
    t = [r["t"] for r in rows]
    for ax, k in zip(axes, keys):
        ax.plot(t, [r.get(k, np.nan) for r in rows], marker="o", ms=3, lw=1)
        ax.set_xlabel("step")
        ax.set_ylabel(k.replace("_", " "))
    fig.tight_layout()
    return fig


def plot_particles(x, modes=None, title=None):
    """Scatter of 2-D particles with optional mode markers."""
    x = np.asarray(x, dtype=float)
    fig, ax = new(scale=0.5, ratio=1.0)
    if modes is not None:
        m = np.asarray(modes)
        ax.scatter(m[:, 0], m[:, 1], marker="x", c="k", s=30, label="modes")
    ax.scatter(x[:, 0], x[:, 1], s=4, alpha=0.6, label="particles")
    ax.set_aspect("equal")
    if title:
        ax.set_title(title)
    ax.legend(loc="upper right", frameon=False)
    return fig
