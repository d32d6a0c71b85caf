"""End-to-end experiment drivers shared by the command line and the test suite.

Every random quantity is derived from the run seed with a fixed key so a run
can be replayed exactly:

====  ==========================================
key   use
====  ==========================================
100   GAN training
101   target samples for the p-side estimate
102   held-out target samples for metrics
0-2   refinement internals (see ``flow.refine``)
====  ==========================================
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .conditions import ComponentCondition, ConditionModel, DiscriminatorCondition, MaskCondition, NoCondition
from .errors import ConfigInvalid, NumericalFailure
from .flow import FlowConfig, RefineResult, refine
from .nets import GanTrainConfig, MlpNet, train_toy_gan
from .numerics import child_rng
from .targets import GmmTarget, gmm_sample, gmm_score

logger = logging.getLogger(__name__)

TERMS = {
    "pq": (1.0, 1.0, 0.0),
    "q": (1.0, 0.0, 0.0),
    "p": (0.0, 1.0, 0.0),
    "c": (0.0, 0.0, 1.0),
}


def train_stage(target: GmmTarget, cfg: GanTrainConfig, seed: int):
    return train_toy_gan(target, cfg, child_rng(seed, 100))


def sample_sets(target: GmmTarget, n_target: int, n_eval: int, seed: int):
    """Target samples for the p-side fit and an independent held-out set."""
    return (gmm_sample(target, n_target, child_rng(seed, 101)),
            gmm_sample(target, n_eval, child_rng(seed, 102)))


def build_condition(variant: str, target: GmmTarget | None = None, disc: MlpNet | None = None,
                    observed=(0,), values=(0.0,), tau=0.05, index=0, beta=1.0) -> ConditionModel:
    if variant == "none":
        return NoCondition()
    if variant == "discriminator":
        if disc is None:
            raise ConfigInvalid("condition 'discriminator' needs a discriminator net")
        return DiscriminatorCondition(disc)
    if variant == "mask":
        return MaskCondition(tuple(observed), np.asarray(values, float), tau)
    if variant == "component":
        if target is None:
            raise ConfigInvalid("condition 'component' needs a mixture target")
        return ComponentCondition(target, int(index), beta)
    raise ConfigInvalid(f"unknown condition variant {variant!r}")


def run_refine(gen, disc, target: GmmTarget, cfg: FlowConfig, seed: int, cond=None,
               n_eval: int = 1024, oracle_score: bool = False) -> RefineResult:
    """Refine ``gen`` toward ``target`` with metrics against held-out samples.

    ``oracle_score`` replaces the p-side estimate by the exact mixture score.
    """
    samples, held_out = sample_sets(target, cfg.n_target, n_eval, seed)
    p_score = (lambda x: gmm_score(target, x)) if oracle_score else None
    return refine(gen, disc, samples, cond, cfg, seed, eval_samples=held_out, target=target, p_score=p_score)


@dataclass
class AblationGrid:
    estimators: tuple = ("krr", "kde")
    sigmas: tuple = (0.0, 0.05)
    terms: tuple = ("pq", "q", "p", "c")
    step_sizes: tuple = (0.3,)
    steps: tuple = (10,)

    def validate(self):
        for name in ("estimators", "sigmas", "terms", "step_sizes", "steps"):
            if not getattr(self, name):
                raise ConfigInvalid(f"ablation grid entry {name!r} is empty")
        bad = [t for t in self.terms if t not in TERMS]
        if bad:
            raise ConfigInvalid(f"unknown ablation terms {bad}; choose from {sorted(TERMS)}")
        bad = [e for e in self.estimators if e not in ("krr", "kde")]
        if bad:
            raise ConfigInvalid(f"unknown estimators {bad}")

    def cells(self):
        for est in self.estimators:
            for sigma in self.sigmas:
                for term in self.terms:
                    for lam in self.step_sizes:
                        for steps in self.steps:
                            yield {"estimator": est, "sigma": float(sigma), "terms": term,
                                   "step_size": float(lam), "steps": int(steps)}


def cell_config(base: FlowConfig, cell: dict) -> FlowConfig:
    a, b, c = TERMS[cell["terms"]]
    lam = cell["step_size"]
    return replace(base, estimator=cell["estimator"], sigma=cell["sigma"], sigma_final=None,
                   lambda1=a * lam, lambda2=b * lam, lambda3=c * lam, steps=cell["steps"])


def run_ablation(gen, disc, target: GmmTarget, base: FlowConfig, grid: AblationGrid, seed: int,
                 cond=None, n_eval: int = 1024, on_cell=None):
    """Run every grid cell with the same seed and collect one summary row each.

    A cell that fails numerically is recorded with ``status`` set to the
    error name and the sweep continues. ``flag`` marks cells whose final MMD
    is above the initial value or that failed.
    """
    grid.validate()
    rows = []
    for i, cell in enumerate(grid.cells()):
        cfg = cell_config(base, cell)
        row = dict(cell=i, **cell)
        try:
            res = run_refine(gen, disc, target, cfg, seed, cond=cond if cfg.lambda3 > 0 else None,
                             n_eval=n_eval)
        except NumericalFailure as exc:
            logger.warning("ablation cell %d failed: %s", i, exc)
            row.update(status=type(exc).__name__, initial_mmd=float("nan"), final_mmd=float("nan"),
                       modes_initial=-1, modes_final=-1, hq_fraction=float("nan"), flag="failed")
            rows.append(row)
            if on_cell is not None:
                on_cell(i, cell, None)
            continue
        first, last = res.trajectory[0], res.trajectory[-1]
        row.update(status="ok", initial_mmd=first["mmd"], final_mmd=last["mmd"],
                   modes_initial=first["modes_covered"], modes_final=last["modes_covered"],
                   hq_fraction=last["hq_fraction"],
                   flag="mmd_regression" if last["mmd"] > first["mmd"] else "")
        rows.append(row)
        if on_cell is not None:
            on_cell(i, cell, res)
    return rows


def per_term_report(rows):
    """Final metrics of the single-term cells, keyed by term then cell index."""
    out = {}
    for r in rows:
        out.setdefault(r["terms"], []).append(
            {k: r[k] for k in ("cell", "estimator", "sigma", "step_size", "steps", "status",
                               "initial_mmd", "final_mmd", "modes_final", "hq_fraction")})
    return out
