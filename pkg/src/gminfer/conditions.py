"""Condition models supplying ``log p(c | x)`` up to a constant, and its gradient.

Variants
--------
none
    No condition; contributes nothing.
discriminator
    ``d(x)``, the scalar logit of a trained discriminator.
mask
    Observed coordinates ``x[obs]`` should match values ``c`` with Gaussian
    noise ``tau``: ``-|x[obs] - c|^2 / (2 tau^2)``.
component
    Mixture-label conditioning: ``beta * log P(component j | x)`` under a
    Gaussian-mixture target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nets import MlpNet, mlp_forward, mlp_vjp
from .targets import GmmTarget, gmm_component_posterior


def _batch(x):
    x = np.asarray(x, dtype=float)
    return np.atleast_2d(x), x.ndim == 1


class ConditionModel:
    variant = "none"

    def log_likelihood(self, xb):
        return np.zeros(len(xb))

    def grad(self, xb):
        return np.zeros_like(xb)

    def describe(self) -> dict:
        return {"variant": self.variant}


NoCondition = ConditionModel


@dataclass
class DiscriminatorCondition(ConditionModel):
    net: MlpNet
    variant = "discriminator"

    def log_likelihood(self, xb):
        return mlp_forward(self.net, xb)[:, 0]

    def grad(self, xb):
        gx, _ = mlp_vjp(self.net, xb, np.ones((len(xb), 1)))
        return gx


@dataclass
class MaskCondition(ConditionModel):
    observed: tuple
    values: np.ndarray
    tau: float = 0.05
    variant = "mask"

    def __post_init__(self):
        self.observed = tuple(int(i) for i in self.observed)
        self.values = np.atleast_1d(np.asarray(self.values, dtype=float))
        if len(self.values) != len(self.observed):
            raise ValueError("one observed value per observed index is required")
        if not self.tau > 0:
            raise ValueError("tau must be positive")

    def _check(self, xb):
        if any(i < 0 or i >= xb.shape[1] for i in self.observed):
            raise ValueError(f"mask indices {self.observed} invalid for dimension {xb.shape[1]}")

    def log_likelihood(self, xb):
        self._check(xb)
        r = xb[:, self.observed] - self.values
        return -(r**2).sum(1) / (2 * self.tau**2)

    def grad(self, xb):
        self._check(xb)
        g = np.zeros_like(xb)
        g[:, self.observed] = -(xb[:, self.observed] - self.values) / self.tau**2
        return g

    def describe(self):
        return {"variant": self.variant, "observed": list(self.observed),
                "values": self.values.tolist(), "tau": self.tau}


@dataclass
class ComponentCondition(ConditionModel):
    target: GmmTarget
    index: int
    beta: float = 1.0
    variant = "component"

    def __post_init__(self):
        if not 0 <= self.index < self.target.n_components:
            raise ValueError("component index out of range")
        if not self.beta > 0:
            raise ValueError("beta must be positive")

    def log_likelihood(self, xb):
        terms = self.target._component_log_terms(xb)
        top = terms.max(1, keepdims=True)
        lse = top[:, 0] + np.log(np.exp(terms - top).sum(1))
        return self.beta * (terms[:, self.index] - lse)

    def grad(self, xb):
        t = self.target
        post = gmm_component_posterior(t, xb)
        comp = -(xb[:, None, :] - t.means[None]) / (t.stddevs[None, :, None] ** 2)
        return self.beta * (comp[:, self.index] - (post[:, :, None] * comp).sum(1))

    def describe(self):
        return {"variant": self.variant, "target": self.target.name,
                "index": self.index, "beta": self.beta}


def cond_log_likelihood(m: ConditionModel, x):
    xb, single = _batch(x)
    out = m.log_likelihood(xb)
    return float(out[0]) if single else out


def cond_grad(m: ConditionModel, x):
    xb, single = _batch(x)
    out = m.grad(xb)
    return out[0] if single else out
