import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import PINNED_SEED, fd_grad, rel_err
from gminfer.conditions import ComponentCondition
from gminfer.discrete import (
    Codebook,
    DiscreteFlowConfig,
    make_codebook,
    quantize,
    quantize_indices,
    reg_grad,
    reg_value,
    two_stage_refine,
)
from gminfer.errors import ShapeMismatch
from gminfer.nets import init_mlp
from gminfer.numerics import child_rng, make_rng
from gminfer.targets import target_from_components

PAIR = target_from_components([(0.5, (-1.0, 0.0), 0.5), (0.5, (1.0, 0.0), 0.5)])
TWO = Codebook(np.array([[0.0, 0.0], [2.0, 0.0]]))


def setup(seed=PINNED_SEED):
    dec = init_mlp([8, 32, 32, 2], child_rng(seed, 30))
    cb = make_codebook(16, 2, child_rng(seed, 31))
    return dec, cb, ComponentCondition(PAIR, 0, 1.0)


def test_quantize_cases():
    assert quantize(TWO, [2.0, 0.0])[0] == 1
    assert quantize(TWO, [0.9, 0.0])[0] == 0
    idx, entry = quantize(TWO, [1.0, 0.0])
    assert idx == 0
    np.testing.assert_array_equal(entry, [0.0, 0.0])


def test_codebook_validation():
    with pytest.raises(ValueError):
        Codebook(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(ShapeMismatch):
        quantize_indices(TWO, np.zeros((2, 3)))


def test_reg_grad_zero_cases():
    slots = TWO.entries.copy()
    assert not reg_grad(TWO, slots, 5.0).any()
    assert not reg_grad(TWO, make_rng(0).standard_normal((3, 2)), 0.0).any()


def test_reg_grad_matches_fd():
    rng = make_rng(1)
    cb = make_codebook(8, 2, rng)
    checked = 0
    while checked < 5:
        s = rng.standard_normal((4, 2))
        d2 = np.sort(((s[:, None] - cb.entries[None]) ** 2).sum(-1), axis=1)
        if np.min(d2[:, 1] - d2[:, 0]) < 1e-2:
            continue
        assert rel_err(reg_grad(cb, s, 3.0), fd_grad(lambda v: reg_value(cb, v, 3.0), s)) < 1e-4
        checked += 1


def test_degenerate_schedule_just_quantizes():
    dec, cb, cond = setup()
    cfg = DiscreteFlowConfig(warmup_steps=0, finetune_steps=0)
    res = two_stage_refine(dec, cb, cond, cfg, PINNED_SEED)
    z0 = child_rng(PINNED_SEED, 0).standard_normal((cfg.n_particles, 4, 2))
    np.testing.assert_array_equal(res.slots, cb.entries[quantize_indices(cb, z0)])


def test_all_slots_exact_entries():
    dec, cb, cond = setup()
    res = two_stage_refine(dec, cb, cond, DiscreteFlowConfig(), PINNED_SEED)
    flat = res.slots.reshape(-1, 2)
    assert all(any(np.array_equal(s, e) for e in cb.entries) for s in flat)
    np.testing.assert_array_equal(res.slots, cb.entries[res.indices])


def test_strong_regularizer_collapses_residual():
    dec, cb, cond = setup()
    res = two_stage_refine(dec, cb, cond, DiscreteFlowConfig(alpha_reg=1e3), PINNED_SEED)
    assert res.warmup_residual < 1e-2 * res.initial_residual


def test_finetune_improves_condition_over_warmup_only():
    dec, cb, cond = setup()
    res = two_stage_refine(dec, cb, cond, DiscreteFlowConfig(), PINNED_SEED)
    assert res.final_objective < res.warmup_only_objective


def test_pure_regularizer_descent():
    dec, cb, cond = setup()
    cfg = DiscreteFlowConfig(alpha_reg=10.0, reg_step=0.01, warmup_lambdas=(0, 0, 0), finetune_steps=0)
    res = two_stage_refine(dec, cb, cond, cfg, PINNED_SEED)
    vals = [r["reg_value"] for r in res.trajectory if r["stage"] == "warmup"][-10:]
    assert all(b <= a for a, b in zip(vals, vals[1:]))


def test_slot_update_locality():
    dec, cb, cond = setup()
    cfg = DiscreteFlowConfig(warmup_steps=3, finetune_steps=3)
    res = two_stage_refine(dec, cb, cond, cfg, PINNED_SEED, keep_slots=True)
    for i in range(4):
        rows = [r["slots"] for r in res.trajectory if r["stage"] == f"slot:{i}"]
        others = [j for j in range(4) if j != i]
        for a, b in zip(rows, rows[1:]):
            np.testing.assert_array_equal(a[:, others], b[:, others])


def test_trajectory_stages_and_determinism():
    dec, cb, cond = setup()
    cfg = DiscreteFlowConfig(warmup_steps=4, finetune_steps=2)
    a = two_stage_refine(dec, cb, cond, cfg, 3)
    b = two_stage_refine(dec, cb, cond, cfg, 3)
    assert [r["stage"] for r in a.trajectory] == ["warmup"] * 5 + [f"slot:{i}" for i in range(4) for _ in range(2)]
    assert a.trajectory == b.trajectory
    np.testing.assert_array_equal(a.x, b.x)


def test_decoder_shape_checked():
    dec = init_mlp([6, 8, 8, 2], make_rng(0))
    with pytest.raises(ShapeMismatch):
        two_stage_refine(dec, make_codebook(4, 2, make_rng(1)), None, DiscreteFlowConfig(), 0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-4, 4), min_size=2, max_size=2))
def test_quantize_is_nearest(z):
    cb = make_codebook(6, 2, make_rng(2))
    idx, e = quantize(cb, z)
    d = np.linalg.norm(cb.entries - np.array(z), axis=1)
    assert d[idx] == d.min()
