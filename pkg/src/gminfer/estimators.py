"""Kernel log-density and score estimators.

Both estimators have the form ``log sum_i w_i k_psi(x, b_i)`` over basis points
``b_i``. Kernel ridge regression sets ``w = (K + ridge I)^{-1} 1``, which is
the column sum of the preconditioning matrix ``(K + ridge I)^{-1}``; the KDE
baseline uses ``w = 1``. As ``ridge`` grows, ``ridge * w`` tends to ``1``, so
KRR scores converge to KDE scores.

The density is unnormalized. Only gradients of its log are consumed by the
flow, so the missing constant does not matter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernels import KernelSpec, cross_kernel, kernel_matrix, shifted_features
from .numerics import cholesky_solve, gaussian_draws

LOG_FLOOR = 1e-300
MODES = ("krr", "kde")


@dataclass
class DensityEstimate:
    basis: np.ndarray
    weights: np.ndarray
    kernel: KernelSpec
    eps: np.ndarray
    ridge: float
    mode: str
    clamp_events: int = 0
    _feats: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.weights) != len(self.basis):
            raise ValueError("one weight per basis point is required")
        if not self.ridge > 0:
            raise ValueError("ridge must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self._feats is None:
            self._feats = shifted_features(self.kernel, self.basis, self.eps)


def _draw_eps(spec: KernelSpec, dim, rng):
    return gaussian_draws(rng, spec.mollifier.m, dim, spec.mollifier.sigma)


def fit_krr(basis, spec: KernelSpec, ridge: float, rng=None, eps=None) -> DensityEstimate:
    """Fit KRR weights ``(K + ridge I)^{-1} 1`` on ``basis``.

    Mollifier draws come from ``rng`` unless ``eps`` is passed explicitly; the
    same draws are used for the kernel matrix and every later evaluation.
    """
    basis = np.atleast_2d(np.asarray(basis, dtype=float))
    if not ridge > 0:
        raise ValueError("ridge must be positive")
    if eps is None:
        eps = _draw_eps(spec, basis.shape[1], rng)
    K = kernel_matrix(spec, basis, eps)
    n = len(basis)
    w = cholesky_solve(K + ridge * np.eye(n), np.ones(n))
    return DensityEstimate(basis, w, spec, np.asarray(eps, float), float(ridge), "krr")


def fit_kde(basis, spec: KernelSpec, rng=None, eps=None) -> DensityEstimate:
    basis = np.atleast_2d(np.asarray(basis, dtype=float))
    if eps is None:
        eps = _draw_eps(spec, basis.shape[1], rng)
    return DensityEstimate(basis, np.ones(len(basis)), spec, np.asarray(eps, float), 1.0, "kde")


def fit_estimator(mode, basis, spec, ridge, rng=None, eps=None) -> DensityEstimate:
    if mode == "krr":
        return fit_krr(basis, spec, ridge, rng, eps)
    if mode == "kde":
        return fit_kde(basis, spec, rng, eps)
    raise ValueError(f"unknown estimator mode {mode!r}")


def log_density(est: DensityEstimate, x):
    """``log max(sum_i w_i k_psi(x, b_i), 1e-300)`` at a point or a batch.

    Every query that hits the floor increments ``est.clamp_events``.
    """
    x = np.asarray(x, dtype=float)
    s = cross_kernel(est.kernel, np.atleast_2d(x), est._feats, est.weights)
    low = s <= LOG_FLOOR
    est.clamp_events += int(low.sum())
    out = np.log(np.where(low, LOG_FLOOR, s))
    return float(out[0]) if x.ndim == 1 else out


def grad_log_density(est: DensityEstimate, x):
    """Score ``sum_i w_i grad k_psi(x, b_i) / sum_i w_i k_psi(x, b_i)``.

    Queries in the clamped region get a zero vector and count a clamp event.
    """
    x = np.asarray(x, dtype=float)
    s, g = cross_kernel(est.kernel, np.atleast_2d(x), est._feats, est.weights, with_grad=True)
    low = s <= LOG_FLOOR
    est.clamp_events += int(low.sum())
    out = np.where(low[:, None], 0.0, g / np.where(low, 1.0, s)[:, None])
    return out[0] if x.ndim == 1 else out
