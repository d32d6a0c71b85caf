from dataclasses import replace

import numpy as np
import pytest

from conftest import PINNED_SEED, fd_grad, rel_err
from gminfer.conditions import NoCondition
from gminfer.errors import NonFiniteUpdate, ShapeMismatch
from gminfer.estimators import fit_krr, grad_log_density
from gminfer.flow import (
    FlowConfig,
    IdentityGenerator,
    ParticleSet,
    flow_step,
    generate,
    latent_pullback,
    refine,
)
from gminfer.kernels import FeatureExtractor, KernelSpec, MollifierSpec
from gminfer.nets import MlpNet, init_mlp, mlp_forward
from gminfer.numerics import make_rng
from gminfer.targets import gauss1, gmm_sample, gmm_score, target_from_components

IDENT = IdentityGenerator(2)


def linear_generator(A):
    # relu(z) - relu(-z) = z, so the three-layer relu net computes x = A z
    d = A.shape[1]
    eye = np.eye(d)
    w1 = np.hstack([eye, -eye])
    w2 = np.eye(2 * d)
    w3 = np.vstack([A.T, -A.T])
    return MlpNet([w1, w2, w3], [np.zeros(2 * d), np.zeros(2 * d), np.zeros(A.shape[0])], "relu")


def particles(z, g=IDENT):
    return ParticleSet(z, generate(g, z), 0)


def test_null_step_only_advances_t():
    z = make_rng(0).standard_normal((5, 2))
    cfg = FlowConfig(lambda1=0, lambda2=0, lambda3=0)
    out = flow_step(particles(z), IDENT, None, None, NoCondition(), cfg)
    np.testing.assert_array_equal(out.z, z)
    np.testing.assert_array_equal(out.x, z)
    assert out.t == 1


def test_oracle_gaussian_euler_step():
    mu, s, lam = np.array([1.0, -0.5]), 0.8, 0.2
    t = target_from_components([(1.0, mu, s)])
    z = make_rng(1).standard_normal((6, 2))
    cfg = FlowConfig(lambda1=0, lambda2=lam, lambda3=0)
    out = flow_step(particles(z), IDENT, None, None, NoCondition(), cfg, p_score=lambda x: gmm_score(t, x))
    np.testing.assert_allclose(out.x, z - lam * (z - mu) / s**2, rtol=1e-14)


def test_full_step_displacement_bound():
    rng = make_rng(2)
    x = gmm_sample(gauss1(), 256, rng)
    target = gmm_sample(gauss1(), 1024, rng)
    cfg = FlowConfig(steps=1)
    spec = KernelSpec(FeatureExtractor(), 1.0, MollifierSpec(cfg.sigma, cfg.m))
    q = fit_krr(x, spec, cfg.ridge_q, rng)
    p = fit_krr(target, spec, cfg.ridge_p, rng)
    bound = (cfg.lambda1 * np.linalg.norm(grad_log_density(q, x), axis=1)
             + cfg.lambda2 * np.linalg.norm(grad_log_density(p, x), axis=1))
    out = flow_step(particles(x), IDENT, q, p, NoCondition(), cfg)
    disp = np.linalg.norm(out.x - x, axis=1)
    assert np.all(disp > 0)
    assert np.all(disp <= np.minimum(bound, cfg.clip_factor * cfg.lambda_max) + 1e-12)


def test_clipping_caps_direction():
    z = np.array([[0.0, 0.0], [1.0, 1.0]])
    cfg = FlowConfig(lambda1=0, lambda2=0.1, lambda3=0, clip_factor=10.0)
    out = flow_step(particles(z), IDENT, None, None, NoCondition(), cfg,
                    p_score=lambda x: np.full_like(x, 100.0))
    np.testing.assert_allclose(np.linalg.norm(out.x - z, axis=1), [1.0, 1.0], rtol=1e-12)


def test_non_finite_update_raises():
    z = np.zeros((3, 2))
    cfg = FlowConfig(lambda1=0, lambda2=0.3, lambda3=0)
    with pytest.raises(NonFiniteUpdate):
        flow_step(particles(z), IDENT, None, None, NoCondition(), cfg, p_score=lambda x: np.full_like(x, np.nan))


def test_identity_pullback():
    gx = np.array([[1.5, -2.0]])
    np.testing.assert_array_equal(latent_pullback(IDENT, gx * 0, gx), gx)
    with pytest.raises(ShapeMismatch):
        latent_pullback(IDENT, np.zeros((1, 3)), gx)


def test_linear_generator_pullback():
    A = np.array([[2.0, 1.0], [-1.0, 3.0]])
    g = linear_generator(A)
    z = np.array([0.4, -0.7])
    np.testing.assert_allclose(mlp_forward(g, z), A @ z, rtol=1e-14)
    gx = np.array([1.0, 2.0])
    np.testing.assert_allclose(latent_pullback(g, z[None], gx[None])[0], A.T @ gx, rtol=1e-14)


def test_mlp_pullback_matches_fd():
    rng = make_rng(3)
    g = init_mlp([2, 16, 16, 2], rng)
    for _ in range(5):
        z, gx = rng.standard_normal((2, 2))
        assert rel_err(latent_pullback(g, z[None], gx[None])[0], fd_grad(lambda v: mlp_forward(g, v) @ gx, z)) < 1e-4


def test_zero_steps_returns_initial():
    cfg = FlowConfig(steps=0, n_particles=16, extractor="identity")
    t = gauss1()
    res = refine(IDENT, None, gmm_sample(t, 64, make_rng(4)), None, cfg, 5,
                 eval_samples=gmm_sample(t, 64, make_rng(5)), target=t)
    assert len(res.trajectory) == 1
    np.testing.assert_array_equal(res.final.z, make_rng_z(5, 16))


def make_rng_z(seed, n):
    from gminfer.numerics import child_rng
    return child_rng(seed, 0).standard_normal((n, 2))


def test_refine_consistency_and_determinism(ring8_gan):
    gen, disc, _ = ring8_gan
    t = target_from_components([(1.0, (0.0, 0.0), 1.0)])
    cfg = FlowConfig(steps=3, n_particles=64, n_target=128)
    samples = gmm_sample(t, 128, make_rng(6))
    a = refine(gen, disc, samples, None, cfg, 9, eval_samples=samples, target=t)
    b = refine(gen, disc, samples, None, cfg, 9, eval_samples=samples, target=t)
    np.testing.assert_array_equal(a.final.x, mlp_forward(gen, a.final.z))
    np.testing.assert_array_equal(a.final.z, b.final.z)
    assert a.trajectory == b.trajectory
    assert len(a.trajectory) == 4
    assert set(a.trajectory[0]) >= {"t", "mmd", "modes_covered", "hq_fraction", "clamp_count_q",
                                    "clamp_count_p", "grad_norm_mean", "sigma_current"}


def test_null_condition_equivalence(ring8_gan):
    gen, disc, _ = ring8_gan
    t = gauss1()
    samples = gmm_sample(t, 128, make_rng(7))
    base = FlowConfig(steps=2, n_particles=32, n_target=128)
    a = refine(gen, disc, samples, NoCondition(), replace(base, lambda3=0.3), 3, eval_samples=samples, target=t)
    b = refine(gen, disc, samples, None, replace(base, lambda3=0.0), 3, eval_samples=samples, target=t)
    np.testing.assert_array_equal(a.final.z, b.final.z)
    assert a.trajectory == b.trajectory


def test_missing_target_samples_disable_p_term():
    cfg = FlowConfig(steps=1, n_particles=8, extractor="identity")
    res = refine(IDENT, None, None, None, cfg, 0)
    assert res.metadata["effective_lambda2"] == 0.0


def test_entropy_step_spreads_collapsed_set():
    z0 = np.array([0.5, -0.5]) + 1e-3 * make_rng(8).uniform(-1, 1, (64, 2))
    cfg = FlowConfig(lambda1=0.3, lambda2=0, lambda3=0, steps=1, extractor="identity")
    res = refine(IDENT, None, None, None, cfg, 1, z0=z0)

    def spread(x):
        d = np.linalg.norm(x[:, None] - x[None], axis=-1)
        return d.sum() / (len(x) * (len(x) - 1))

    assert spread(res.final.x) > spread(z0)


def test_sigma_annealing_recorded():
    cfg = FlowConfig(steps=3, n_particles=8, extractor="identity", sigma=0.1, sigma_final=0.0, lambda2=0)
    res = refine(IDENT, None, None, None, cfg, 0)
    assert [r["sigma_current"] for r in res.trajectory[1:]] == pytest.approx([0.1, 0.05, 0.0])


def test_config_validation():
    for bad in (dict(lambda1=-1), dict(steps=-1), dict(n_particles=0), dict(ridge_q=0),
                dict(estimator="gp"), dict(extractor="pca"), dict(bandwidth=0.0)):
        with pytest.raises(ValueError):
            FlowConfig(**bad).validate()
