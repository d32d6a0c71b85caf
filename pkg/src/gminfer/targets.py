"""Isotropic Gaussian-mixture targets with exact density, score and posterior."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp


@dataclass(frozen=True)
class GmmTarget:
    """Mixture of isotropic Gaussians.

    Attributes
    ----------
    weights : (K,) array
        Mixing weights, summing to one.
    means : (K, d) array
    stddevs : (K,) array
        Per-component isotropic standard deviations.
    name : str
        Label used in manifests; "custom" for explicit component lists.
    """

    weights: np.ndarray
    means: np.ndarray
    stddevs: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        s = np.atleast_1d(np.asarray(self.stddevs, dtype=float))
        if not (len(w) == len(mu) == len(s)):
            raise ValueError("weights, means and stddevs must have one entry per component")
        if np.any(w <= 0) or np.any(w > 1) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must lie in (0, 1] and sum to 1")
        if np.any(s <= 0):
            raise ValueError("stddevs must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "stddevs", s)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def _component_log_terms(self, x):
        # log w_k + log N(x; mu_k, s_k^2 I), shape (n, K)
        x = np.atleast_2d(x)
        d = self.dim
        sq = ((x[:, None, :] - self.means[None, :, :]) ** 2).sum(-1)
        s2 = self.stddevs**2
        return (
            np.log(self.weights)
            - 0.5 * d * np.log(2 * np.pi * s2)
            - 0.5 * sq / s2
        )


def ring8(radius=2.0, stddev=0.02) -> GmmTarget:
    angles = 2 * np.pi * np.arange(8) / 8
    means = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return GmmTarget(np.full(8, 1 / 8), means, np.full(8, stddev), name="ring8")


def grid25(spacing=2.0, stddev=0.05) -> GmmTarget:
    ticks = spacing * (np.arange(5) - 2)
    means = np.array([(a, b) for a in ticks for b in ticks])
    return GmmTarget(np.full(25, 1 / 25), means, np.full(25, stddev), name="grid25")


def gauss1(dim=2) -> GmmTarget:
    return GmmTarget(np.ones(1), np.zeros((1, dim)), np.ones(1), name="gauss1")


BUILTIN_TARGETS = {"ring8": ring8, "grid25": grid25, "gauss1": gauss1}


def get_target(name: str) -> GmmTarget:
    try:
        return BUILTIN_TARGETS[name]()
    except KeyError:
        raise KeyError(f"unknown target {name!r}; choose from {sorted(BUILTIN_TARGETS)}") from None


def gmm_sample(t: GmmTarget, n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    comp = rng.choice(t.n_components, size=n, p=t.weights)
    noise = rng.standard_normal((n, t.dim))
    return t.means[comp] + t.stddevs[comp, None] * noise


def gmm_log_density(t: GmmTarget, x):
    """Log mixture density at a point ``(d,)`` or a batch ``(n, d)``."""
    x = np.asarray(x, dtype=float)
    out = logsumexp(t._component_log_terms(x), axis=1)
    return float(out[0]) if x.ndim == 1 else out


def gmm_component_posterior(t: GmmTarget, x):
    x = np.asarray(x, dtype=float)
    terms = t._component_log_terms(x)
    post = np.exp(terms - logsumexp(terms, axis=1, keepdims=True))
    return post[0] if x.ndim == 1 else post


def gmm_score(t: GmmTarget, x):
    """Exact gradient of :func:`gmm_log_density`.

    The score is the responsibility-weighted sum of component scores
    ``-(x - mu_k) / s_k^2``.
    """
    x = np.asarray(x, dtype=float)
    xb = np.atleast_2d(x)
    post = gmm_component_posterior(t, xb)
    comp_scores = -(xb[:, None, :] - t.means[None]) / (t.stddevs[None, :, None] ** 2)
    out = (post[:, :, None] * comp_scores).sum(1)
    return out[0] if x.ndim == 1 else out


def target_from_components(components, name="custom") -> GmmTarget:
    """Build a target from ``[(weight, mean, stddev), ...]``."""
    w, mu, s = zip(*components)
    return GmmTarget(np.array(w, dtype=float), np.array(mu, dtype=float), np.array(s, dtype=float), name=name)
