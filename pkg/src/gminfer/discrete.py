"""Refinement for vector-quantized (slotted) latent codes.

A latent is ``k`` slots of dimension ``s`` concatenated into a decoder input.
Slots move continuously under the flow direction while a codebook-attraction
penalty ``alpha * sum_i |z_i - e_i|^2`` pulls each slot to its nearest entry
``e_i``. The schedule has two stages:

1. warm-up: all slots move jointly for ``warmup_steps``;
2. fine-tune: slots are visited in ascending order; slot ``i`` moves alone for
   ``finetune_steps`` with every other slot fed to the decoder at its
   quantized value, then it is hard-quantized.

The penalty is applied as an implicit (proximal) gradient step whose length
defaults to the stage's largest flow step size, so each update is one
proximal-gradient step on the flow objective plus the penalty. The implicit
form stays stable for any ``alpha``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .conditions import ConditionModel, NoCondition
from .errors import NonFiniteUpdate, ShapeMismatch
from .estimators import fit_estimator, grad_log_density
from .flow import FlowConfig, _clip
from .kernels import FeatureExtractor, KernelSpec, MollifierSpec, feature_median_bandwidth
from .nets import MlpNet, mlp_forward, mlp_vjp
from .numerics import child_rng, gaussian_draws


@dataclass(frozen=True)
class Codebook:
    entries: np.ndarray

    def __post_init__(self):
        e = np.atleast_2d(np.asarray(self.entries, dtype=float))
        if len(e) < 2:
            raise ValueError("a codebook needs at least two entries")
        if len(np.unique(e, axis=0)) != len(e):
            raise ValueError("codebook entries must be pairwise distinct")
        object.__setattr__(self, "entries", e)

    @property
    def dim(self):
        return self.entries.shape[1]


def make_codebook(size: int, dim: int, rng) -> Codebook:
    return Codebook(rng.standard_normal((size, dim)))


def quantize_indices(cb: Codebook, z) -> np.ndarray:
    """Nearest-entry indices for every row of ``z`` (ties -> lowest index)."""
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != cb.dim:
        raise ShapeMismatch(f"slot dimension {z.shape[-1]} does not match codebook dimension {cb.dim}")
    flat = z.reshape(-1, cb.dim)
    d2 = ((flat[:, None, :] - cb.entries[None]) ** 2).sum(-1)
    return np.argmin(d2, axis=1).reshape(z.shape[:-1])


def quantize(cb: Codebook, z):
    """Return ``(index, entry)`` of the entry nearest to the single vector ``z``."""
    idx = int(quantize_indices(cb, np.asarray(z, dtype=float)[None])[0])
    return idx, cb.entries[idx].copy()


def reg_value(cb: Codebook, slots, alpha_reg: float) -> float:
    slots = np.asarray(slots, dtype=float)
    e = cb.entries[quantize_indices(cb, slots)]
    return float(alpha_reg * ((slots - e) ** 2).sum())


def reg_grad(cb: Codebook, slots, alpha_reg: float, assignment=None) -> np.ndarray:
    """``2 alpha (z_i - e_i)`` per slot, re-quantizing unless ``assignment`` is given."""
    slots = np.asarray(slots, dtype=float)
    idx = quantize_indices(cb, slots) if assignment is None else assignment
    return 2.0 * alpha_reg * (slots - cb.entries[idx])


def _prox(cb, slots, alpha_reg, step, assignment=None):
    idx = quantize_indices(cb, slots) if assignment is None else assignment
    e = cb.entries[idx]
    c = 2.0 * alpha_reg * step
    return (slots + c * e) / (1.0 + c)


@dataclass
class DiscreteFlowConfig:
    alpha_reg: float = 1.0
    reg_step: float | None = None
    warmup_steps: int = 20
    finetune_steps: int = 10
    warmup_lambdas: tuple = (0.0, 0.0, 0.3)
    finetune_lambdas: tuple = (0.0, 0.0, 0.3)
    n_particles: int = 32
    slots: int = 4
    slot_order: str = "ascending"
    requantize: bool = True
    flow: FlowConfig = field(default_factory=lambda: FlowConfig(extractor="identity", sigma=0.0))

    def reg_step_for(self, lambdas):
        return max(lambdas) if self.reg_step is None else self.reg_step

    def validate(self):
        if self.alpha_reg < 0 or (self.reg_step is not None and self.reg_step < 0):
            raise ValueError("alpha_reg and reg_step must be non-negative")
        if self.warmup_steps < 0 or self.finetune_steps < 0 or self.n_particles < 1 or self.slots < 1:
            raise ValueError("step and particle counts must be non-negative")
        if self.slot_order != "ascending":
            raise ValueError("only the ascending slot order is implemented")
        if min(self.warmup_lambdas) < 0 or min(self.finetune_lambdas) < 0:
            raise ValueError("step sizes must be non-negative")


@dataclass
class DiscreteResult:
    slots: np.ndarray
    indices: np.ndarray
    x: np.ndarray
    trajectory: list
    warmup_only_objective: float
    final_objective: float
    initial_residual: float
    warmup_residual: float


def _decode(decoder, slots):
    n = slots.shape[0]
    return mlp_forward(decoder, slots.reshape(n, -1))


def _direction(decoder, slots, lambdas, cond, p_est, cfg: DiscreteFlowConfig, kernel, seed, tag):
    """Latent-space flow direction for all slots, shape like ``slots``."""
    l1, l2, l3 = lambdas
    n = slots.shape[0]
    zin = slots.reshape(n, -1)
    x = mlp_forward(decoder, zin)
    gx = np.zeros_like(x)
    if l1 > 0 and n > 1:
        eps = gaussian_draws(child_rng(seed, *tag), kernel.mollifier.m, x.shape[1], kernel.mollifier.sigma)
        q_est = fit_estimator(cfg.flow.estimator, x, kernel, cfg.flow.ridge_q, eps=eps)
        gx -= l1 * grad_log_density(q_est, x)
    if l2 > 0 and p_est is not None:
        gx += l2 * grad_log_density(p_est, x)
    if l3 > 0:
        gx += l3 * cond.grad(x)
    lmax = max(lambdas)
    if lmax > 0 and cfg.flow.clip_factor is not None:
        gx, _ = _clip(gx, cfg.flow.clip_factor * lmax)
    gz, _ = mlp_vjp(decoder, zin, gx)
    return gz.reshape(slots.shape), gx


def two_stage_refine(decoder: MlpNet, cb: Codebook, cond: ConditionModel | None,
                     cfg: DiscreteFlowConfig, seed: int, target_samples=None, z0=None,
                     keep_slots: bool = False) -> DiscreteResult:
    """Warm-up then per-slot fine-tune with hard quantization.

    Returns the fully quantized latents, their decoded points, a trace with one
    entry per update (``stage`` is ``"warmup"`` or ``"slot:i"``), and the
    condition loss ``-mean log p(c|x)`` both for the final latents and for the
    warm-up-only alternative that quantizes every slot right after warm-up.
    With ``keep_slots`` each trace entry also holds a copy of the slots.
    """
    cfg.validate()
    cond = cond if cond is not None else NoCondition()
    k, s = cfg.slots, cb.dim
    if decoder.in_dim != k * s:
        raise ShapeMismatch(f"decoder input {decoder.in_dim} != slots {k} x slot dim {s}")
    if z0 is None:
        z0 = child_rng(seed, 0).standard_normal((cfg.n_particles, k, s))
    slots = np.array(z0, dtype=float)

    x0 = _decode(decoder, slots)
    fcfg = cfg.flow
    h = fcfg.bandwidth if fcfg.bandwidth is not None else feature_median_bandwidth(FeatureExtractor(), x0)
    kernel = KernelSpec(FeatureExtractor(), h, MollifierSpec(fcfg.sigma, fcfg.m))
    p_est = None
    if target_samples is not None and max(cfg.warmup_lambdas[1], cfg.finetune_lambdas[1]) > 0:
        p_est = fit_estimator(fcfg.estimator, target_samples, kernel, fcfg.ridge_p, child_rng(seed, 1))

    def loss(sl):
        return float(-np.mean(cond.log_likelihood(_decode(decoder, sl))))

    def residual(sl):
        e = cb.entries[quantize_indices(cb, sl)]
        return float(np.max(np.linalg.norm(sl - e, axis=-1)))

    trace = []

    def record(stage, t, sl, gx=None):
        trace.append({
            "stage": stage, "t": t,
            "cond_loss": loss(sl),
            "reg_value": reg_value(cb, sl, cfg.alpha_reg),
            "residual_max": residual(sl),
            "grad_norm_mean": 0.0 if gx is None else float(np.linalg.norm(gx, axis=1).mean()),
        })
        if keep_slots:
            trace[-1]["slots"] = sl.copy()

    initial_residual = residual(slots)
    record("warmup", 0, slots)
    assignment = None if cfg.requantize else quantize_indices(cb, slots)
    for t in range(cfg.warmup_steps):
        gz, gx = _direction(decoder, slots, cfg.warmup_lambdas, cond, p_est, cfg, kernel, seed, (2, t))
        slots = _prox(cb, slots + gz, cfg.alpha_reg, cfg.reg_step_for(cfg.warmup_lambdas), assignment)
        if not np.all(np.isfinite(slots)):
            raise NonFiniteUpdate(f"non-finite slot update at warm-up step {t}")
        record("warmup", t + 1, slots, gx)
    warmup_residual = residual(slots)
    warm_q = cb.entries[quantize_indices(cb, slots)]
    warmup_only = loss(warm_q)

    for i in range(k):
        assignment = None if cfg.requantize else quantize_indices(cb, slots)
        for t in range(cfg.finetune_steps):
            view = cb.entries[quantize_indices(cb, slots)]
            view[:, i] = slots[:, i]
            gz, gx = _direction(decoder, view, cfg.finetune_lambdas, cond, p_est, cfg, kernel, seed, (3, i, t))
            sub_assign = None if assignment is None else assignment[:, i]
            slots[:, i] = _prox(cb, slots[:, i] + gz[:, i], cfg.alpha_reg, cfg.reg_step_for(cfg.finetune_lambdas),
                                sub_assign)
            if not np.all(np.isfinite(slots[:, i])):
                raise NonFiniteUpdate(f"non-finite update in slot {i} fine-tune step {t}")
            view[:, i] = slots[:, i]
            record(f"slot:{i}", t + 1, view, gx)
        slots[:, i] = cb.entries[quantize_indices(cb, slots[:, i])]
    idx = quantize_indices(cb, slots)
    final = cb.entries[idx]
    return DiscreteResult(final, idx, _decode(decoder, final), trace, warmup_only, loss(final),
                          initial_residual, warmup_residual)
