"""Sample-based distances and mode-recovery diagnostics."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import TooFewSamples


@dataclass
class MetricReport:
    mmd: float
    energy_distance: float
    modes_covered: int
    hq_fraction: float

    def to_dict(self):
        return asdict(self)


def median_bandwidth(points) -> float:
    """Median of squared pairwise distances between distinct rows.

    Falls back to 1.0 when every pair coincides.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if len(pts) < 2:
        return 1.0
    sq = cdist(pts, pts, "sqeuclidean")
    vals = sq[np.triu_indices(len(pts), k=1)]
    med = float(np.median(vals))
    return med if med > 0 else 1.0


def mmd(X, Y, h: float) -> float:
    """Unbiased squared MMD under the kernel ``exp(-|a - b|^2 / h)``.

    Within-set sums drop the diagonal, so the estimate can be slightly
    negative when the two sets come from the same distribution.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n, m = len(X), len(Y)
    if n < 2 or m < 2:
        raise TooFewSamples("MMD needs at least two samples per set")
    kxx = np.exp(-cdist(X, X, "sqeuclidean") / h)
    kyy = np.exp(-cdist(Y, Y, "sqeuclidean") / h)
    kxy = np.exp(-cdist(X, Y, "sqeuclidean") / h)
    sxx = (kxx.sum() - np.trace(kxx)) / (n * (n - 1))
    syy = (kyy.sum() - np.trace(kyy)) / (m * (m - 1))
    return float(sxx + syy - 2 * kxy.mean())


def energy_distance(X, Y) -> float:
    """V-statistic energy distance ``2E|x-y| - E|x-x'| - E|y-y'|``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    return float(
        2 * cdist(X, Y).mean() - cdist(X, X).mean() - cdist(Y, Y).mean()
    )


def mode_coverage(X, modes, radius: float):
    """Return ``(modes_covered, hq_fraction)`` for samples ``X``.

    A mode counts as covered when at least one sample lies within ``radius``
    of it; ``hq_fraction`` is the share of samples within ``radius`` of any
    mode.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    d = cdist(X, np.atleast_2d(modes))
    near = d <= radius
    return int(near.any(axis=0).sum()), float(near.any(axis=1).mean())


def metric_report(X, target_samples, modes, radius, h=None) -> MetricReport:
    if h is None:
        h = median_bandwidth(np.concatenate([X, target_samples]))
    covered, hq = mode_coverage(X, modes, radius)
    return MetricReport(mmd(X, target_samples, h), energy_distance(X, target_samples), covered, hq)
