import numpy as np
import pytest

from conftest import PINNED_SEED
from gminfer.conditions import ConditionModel
from gminfer.errors import ConfigInvalid
from gminfer.flow import FlowConfig
from gminfer.runs import AblationGrid, build_condition, cell_config, per_term_report, run_ablation
from gminfer.targets import ring8


class NanCondition(ConditionModel):
    variant = "nan"

    def grad(self, xb):
        return np.full_like(xb, np.nan)


def test_cell_config_single_terms():
    base = FlowConfig()
    cfg = cell_config(base, {"estimator": "kde", "sigma": 0.0, "terms": "c", "step_size": 0.5, "steps": 3})
    assert (cfg.lambda1, cfg.lambda2, cfg.lambda3, cfg.steps, cfg.estimator) == (0.0, 0.0, 0.5, 3, "kde")


def test_grid_validation():
    with pytest.raises(ConfigInvalid):
        AblationGrid(terms=("x",)).validate()
    with pytest.raises(ConfigInvalid):
        AblationGrid(sigmas=()).validate()
    assert len(list(AblationGrid().cells())) == 16


def test_build_condition_errors():
    with pytest.raises(ConfigInvalid):
        build_condition("discriminator")
    with pytest.raises(ConfigInvalid):
        build_condition("oracle")


def test_step_size_sweep_flags_large_step(ring8_gan):
    gen, disc, _ = ring8_gan
    grid = AblationGrid(estimators=("krr",), sigmas=(0.05,), terms=("pq",), step_sizes=(0.1, 0.3, 1.0, 2.0))
    rows = run_ablation(gen, disc, ring8(), FlowConfig(), grid, PINNED_SEED)
    by_step = {r["step_size"]: r for r in rows}
    assert by_step[2.0]["flag"] in ("mmd_regression", "failed")
    best = min(rows, key=lambda r: r["final_mmd"])
    assert best["step_size"] == 0.3
    for r in rows:
        assert (r["flag"] == "mmd_regression") == (r["final_mmd"] > r["initial_mmd"])


def test_failed_cell_recorded_and_sweep_continues(ring8_gan):
    gen, disc, _ = ring8_gan
    base = FlowConfig(steps=1, n_particles=16, n_target=64)
    grid = AblationGrid(estimators=("kde",), sigmas=(0.0,), terms=("c", "p"))
    rows = run_ablation(gen, disc, ring8(), base, grid, 0, cond=NanCondition(), n_eval=64)
    assert [r["status"] for r in rows] == ["NonFiniteUpdate", "ok"]
    assert rows[0]["flag"] == "failed"
    report = per_term_report(rows)
    assert set(report) == {"c", "p"}
