import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import fd_grad, rel_err
from gminfer.estimators import fit_estimator, fit_kde, fit_krr, grad_log_density, log_density
from gminfer.kernels import FeatureExtractor, KernelSpec, MollifierSpec, feature_median_bandwidth, kernel_matrix
from gminfer.nets import init_mlp
from gminfer.numerics import gaussian_draws, make_rng


def spec(h=1.0, sigma=0.0, m=1, net=None):
    return KernelSpec(FeatureExtractor(net), h, MollifierSpec(sigma, m))


def test_single_point_weight_and_density():
    est = fit_krr([[0.3, 0.3]], spec(), 1.0, eps=np.zeros((1, 2)))
    np.testing.assert_allclose(est.weights, [0.5], rtol=1e-15)
    assert log_density(est, [0.3, 0.3]) == pytest.approx(np.log(0.5), rel=1e-15)
    np.testing.assert_array_equal(grad_log_density(est, [0.3, 0.3]), [0.0, 0.0])


def test_large_ridge_weights_near_uniform():
    rng = make_rng(0)
    x = rng.standard_normal((16, 2))
    est = fit_krr(x, spec(1.0, 0.1, 8), 1e3, rng)
    assert np.max(np.abs(est.weights * 1e3 - 1.0)) < 0.02


def test_weights_match_dense_inverse():
    rng = make_rng(1)
    x = rng.standard_normal((8, 2))
    s = spec(1.0, 0.1, 8)
    eps = gaussian_draws(rng, 8, 2, 0.1)
    est = fit_krr(x, s, 0.5, eps=eps)
    K = kernel_matrix(s, x, eps)
    np.testing.assert_allclose(est.weights, np.linalg.inv(K + 0.5 * np.eye(8)) @ np.ones(8), rtol=1e-8)


def test_kde_weights_are_ones():
    est = fit_kde(make_rng(2).standard_normal((7, 2)), spec(), eps=np.zeros((1, 2)))
    np.testing.assert_array_equal(est.weights, np.ones(7))


def test_kde_self_kernel_dominates():
    basis = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
    est = fit_kde(basis, spec(), eps=np.zeros((1, 2)))
    assert log_density(est, basis[1]) == pytest.approx(0.0, abs=1e-12)


def test_far_query_is_clamped_and_counted():
    basis = np.array([[0.0, 0.0], [1e-6, 0.0]])
    est = fit_krr(basis, spec(), 1e-3, eps=np.zeros((1, 2)))
    assert np.all(est.weights > 0)
    val = log_density(est, [100.0, 0.0])
    assert val == pytest.approx(np.log(1e-300))
    assert est.clamp_events == 1


def test_grad_matches_fd():
    rng = make_rng(3)
    net = init_mlp([2, 16, 16, 1], rng)
    for s in (spec(1.0, 0.1, 8), spec(4.0, 0.1, 8, net)):
        basis = rng.standard_normal((20, 2))
        est = fit_krr(basis, s, 1.0, rng)
        for x in rng.standard_normal((5, 2)):
            assert rel_err(grad_log_density(est, x), fd_grad(lambda v: log_density(est, v), x)) < 1e-4


def test_batched_equals_single():
    rng = make_rng(4)
    est = fit_kde(rng.standard_normal((30, 2)), spec(1.0, 0.1, 4), rng)
    q = rng.standard_normal((6, 2))
    batch = grad_log_density(est, q)
    for i in range(6):
        np.testing.assert_allclose(batch[i], grad_log_density(est, q[i]), rtol=1e-13)


def test_kde_score_points_to_origin():
    rng = make_rng(5)
    x = rng.standard_normal((4096, 2))
    s = spec(feature_median_bandwidth(FeatureExtractor(), x[:1000]))
    est = fit_kde(x, s, eps=np.zeros((1, 2)))
    probes = rng.uniform(-2, 2, (20, 2))
    g = grad_log_density(est, probes)
    assert np.sum((g * probes).sum(1) < 0) >= 18
    cos = (g * -probes).sum(1) / np.linalg.norm(g, axis=1) / np.linalg.norm(probes, axis=1)
    assert np.median(cos) >= 0.9


def test_weight_gap_non_increasing_in_ridge():
    rng = make_rng(6)
    x = rng.standard_normal((16, 2))
    eps = gaussian_draws(rng, 8, 2, 0.1)
    gaps = [np.linalg.norm(fit_krr(x, spec(1.0, 0.1, 8), eta, eps=eps).weights - 1 / eta)
            for eta in (1.0, 10.0, 100.0, 1000.0)]
    assert all(b <= a for a, b in zip(gaps, gaps[1:]))


def test_fit_estimator_dispatch():
    x = make_rng(7).standard_normal((5, 2))
    assert fit_estimator("kde", x, spec(), 1.0, eps=np.zeros((1, 2))).mode == "kde"
    assert fit_estimator("krr", x, spec(), 1.0, eps=np.zeros((1, 2))).mode == "krr"
    with pytest.raises(ValueError):
        fit_estimator("gp", x, spec(), 1.0)
    with pytest.raises(ValueError):
        fit_krr(x, spec(), 0.0, eps=np.zeros((1, 2)))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from(["krr", "kde"]))
def test_permutation_invariance(seed, mode):
    rng = make_rng(seed)
    x = rng.standard_normal((10, 2))
    eps = gaussian_draws(rng, 4, 2, 0.1)
    perm = rng.permutation(10)
    a = fit_estimator(mode, x, spec(1.0, 0.1, 4), 1.0, eps=eps)
    b = fit_estimator(mode, x[perm], spec(1.0, 0.1, 4), 1.0, eps=eps)
    np.testing.assert_allclose(b.weights, a.weights[perm], rtol=1e-9)
    q = rng.standard_normal(2)
    assert log_density(a, q) == pytest.approx(log_density(b, q), rel=1e-9, abs=1e-12)
