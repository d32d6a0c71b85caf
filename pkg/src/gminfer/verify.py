"""Reproducible numerical checks of the smoothing and ridge-limit properties.

Every procedure returns a plain dict with fixed field names so the CLI can dump
it as JSON; identical seeds give byte-identical dumps.
"""

from __future__ import annotations

import numpy as np

from .conditions import ComponentCondition, DiscriminatorCondition, MaskCondition, cond_log_likelihood
from .discrete import Codebook, reg_grad, reg_value
from .errors import DegenerateFit
from .estimators import fit_estimator, fit_kde, fit_krr, grad_log_density, log_density
from .flow import latent_pullback
from .kernels import (
    FeatureExtractor,
    KernelSpec,
    MollifierSpec,
    feature_median_bandwidth,
    mollified_kernel,
    mollified_kernel_grad,
    mollified_kernel_terms,
    silverman_bandwidth,
)
from .nets import init_mlp, mlp_forward, mlp_vjp
from .numerics import child_rng, cholesky_solve, gaussian_draws
from .targets import GmmTarget

FD_STEP = 1e-5
FD_TOL = 1e-4
GRADIENT_PATHS = ("mlp_vjp", "mollified_kernel_grad", "grad_log_density",
                  "cond_grad", "latent_pullback", "reg_grad")


def gaussian_convolution(sq_dist: float, bandwidth: float, sigma: float, dim: int) -> float:
    """Exact ``E k(x, y - eps)`` for the identity-feature kernel, ``eps ~ N(0, sigma^2 I)``."""
    c = bandwidth + 2 * sigma**2
    return (bandwidth / c) ** (dim / 2) * np.exp(-sq_dist / c)


def _fit_slope(sigmas, errors):
    ls, le = np.log(sigmas), np.log(errors)
    return float(np.polyfit(ls, le, 1)[0])


def smoothing_probes(n, dim, seed, bandwidth=1.0):
    """Random pairs ``(x, y)`` with separation in ``[0.25, 1.5] * sqrt(h)``."""
    rng = child_rng(seed, 7)
    x = rng.standard_normal((n, dim))
    direction = rng.standard_normal((n, dim))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    r = rng.uniform(0.25, 1.5, n) * np.sqrt(bandwidth)
    return x, x + r[:, None] * direction


def verify_smoothing(sigma_grid=(0.05, 0.1, 0.2, 0.4), m=100_000, probes=20, seed=0,
                     bandwidth=1.0, dim=2, extractor=None, pairs=None):
    """Order of the mollification error ``|k_psi - k|`` in ``sigma``.

    For each probe pair the same standard-normal draws are rescaled to every
    ``sigma`` in the grid, and a least-squares line is fitted to
    ``log error`` against ``log sigma``. With the identity extractor each
    Monte-Carlo estimate is also compared with the exact Gaussian convolution
    in units of its standard error.

    Raises
    ------
    DegenerateFit
        If the grid has fewer than two distinct values or an error is zero
        or underflows.
    """
    sigma_grid = [float(s) for s in sigma_grid]
    if len(sigma_grid) < 2 or any(b <= a for a, b in zip(sigma_grid, sigma_grid[1:])):
        raise DegenerateFit("slope fit needs a strictly increasing sigma grid with at least two values")
    if sigma_grid[0] <= 0:
        raise DegenerateFit("sigma values must be positive")
    if m < 10_000:
        raise ValueError("m must be at least 1e4 for a meaningful slope")
    extractor = extractor or FeatureExtractor()
    if pairs is None:
        xs, ys = smoothing_probes(probes, dim, seed, bandwidth)
    else:
        xs, ys = (np.atleast_2d(np.asarray(a, dtype=float)) for a in pairs)
    spec = KernelSpec(extractor, bandwidth, MollifierSpec(0.0, 1))
    identity = extractor.net is None

    slopes, errors, closed, zs = [], [], [], []
    for p, (x, y) in enumerate(zip(xs, ys)):
        u = gaussian_draws(child_rng(seed, 8, p), m, len(y), 1.0)
        base = float(np.exp(-np.sum((extractor(x) - extractor(y)) ** 2) / bandwidth))
        row_err, row_closed, row_z = [], [], []
        for s in sigma_grid:
            terms = mollified_kernel_terms(spec, x, y, s * u)
            est = float(terms.mean())
            row_err.append(abs(est - base))
            if identity:
                exact = gaussian_convolution(float(np.sum((x - y) ** 2)), bandwidth, s, len(y))
                se = float(terms.std(ddof=1) / np.sqrt(m))
                row_closed.append(abs(exact - base))
                row_z.append(abs(est - exact) / se if se > 0 else 0.0)
        if min(row_err) <= 1e-300:
            raise DegenerateFit(f"probe {p}: smoothing error underflows; re-probe with closer points")
        slopes.append(_fit_slope(sigma_grid, row_err))
        errors.append(row_err)
        closed.append(row_closed)
        zs.append(row_z)

    report = {
        "sigma_grid": sigma_grid,
        "m": int(m),
        "bandwidth": float(bandwidth),
        "slope_median": float(np.median(slopes)),
        "per_probe_slopes": slopes,
        "errors": errors,
        "sup_error_over_sigma_sq": float(max(max(e / s**2 for e, s in zip(r, sigma_grid)) for r in errors)),
    }
    if identity:
        report["closed_form_errors"] = closed
        report["closed_form_z"] = zs
        report["closed_form_z_max"] = float(np.max(zs))
        report["closed_form_within_3se"] = bool(np.max(zs) <= 3.0)
    return report


def verify_krr_limit(K, eta_grid=(1.0, 10.0, 100.0, 1000.0)):
    """Distance between ridge-preconditioned and KDE weights as ``eta`` grows.

    Reports ``|(eta I + K)^{-1} - eta^{-1} I|_F`` for each ``eta``, whether the
    sequence strictly decreases, the envelope ``n / eta^2`` and the exact
    one-point value ``k11 / (eta (eta + k11))`` for the leading entry.
    """
    K = np.asarray(K, dtype=float)
    n = K.shape[0]
    eye = np.eye(n)
    dists, envelope, scalar = [], [], []
    for eta in eta_grid:
        inv = cholesky_solve(K + eta * eye, eye)
        dists.append(float(np.linalg.norm(inv - eye / eta)))
        envelope.append(n / eta**2)
        scalar.append(float(K[0, 0] / (eta * (eta + K[0, 0]))))
    return {
        "eta_grid": [float(e) for e in eta_grid],
        "frobenius_by_eta": dists,
        "strictly_decreasing": bool(all(b < a for a, b in zip(dists, dists[1:]))),
        "envelope_n_over_eta_sq": envelope,
        "within_envelope": [bool(d <= e) for d, e in zip(dists, envelope)],
        "scalar_closed_form": scalar,
    }


def random_kernel_matrix(n, seed, dim=2, bandwidth=1.0):
    pts = child_rng(seed, 9).standard_normal((n, dim))
    return np.exp(-((pts[:, None] - pts[None]) ** 2).sum(-1) / bandwidth)


def disk_probes(n, radius, seed, dim=2):
    """``n`` points uniform in the centred disk of the given radius (2-D)."""
    rng = child_rng(seed, 6)
    ang = rng.uniform(0, 2 * np.pi, n)
    rad = radius * np.sqrt(rng.uniform(0, 1, n))
    return np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)


def verify_krr_kde_scores(n=256, ridge=1e3, probes=20, seed=0, sigma=0.05, m=16):
    """Largest component gap between KRR and KDE scores on Gaussian samples."""
    x = child_rng(seed, 0).standard_normal((n, 2))
    spec = KernelSpec(FeatureExtractor(), feature_median_bandwidth(FeatureExtractor(), x), MollifierSpec(sigma, m))
    eps = gaussian_draws(child_rng(seed, 1), m, 2, sigma)
    pts = disk_probes(probes, 2.0, seed)
    a = grad_log_density(fit_krr(x, spec, ridge, eps=eps), pts)
    b = grad_log_density(fit_kde(x, spec, eps=eps), pts)
    return {"n": n, "ridge": ridge, "bandwidth": spec.bandwidth,
            "max_abs_score_gap": float(np.max(np.abs(a - b)))}


# --------------------------------------------------------------------------- gradient audit


def _fd_grad(f, x, h=FD_STEP):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        g[idx] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def _rel(g, fd):
    return float(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), np.linalg.norm(g), 1e-8))


def verify_gradients(seed=0, bias=None, probes=5):
    """Finite-difference audit of every hand-written gradient.

    ``bias`` maps a path name to a constant added to the analytic gradient;
    it exists so tests can confirm that a corrupted gradient is reported.
    """
    bias = bias or {}
    rng = child_rng(seed, 20)
    errs = {p: 0.0 for p in GRADIENT_PATHS}

    def record(path, g, fd):
        errs[path] = max(errs[path], _rel(np.asarray(g) + bias.get(path, 0.0), fd))

    # mlp_vjp: inputs and every parameter of a 4-2-2-2 net with scalar readout
    small = init_mlp([4, 2, 2, 2], rng)
    for _ in range(probes):
        x = rng.standard_normal(4)
        u = rng.standard_normal(2)
        gx, gp = mlp_vjp(small, x, u)
        record("mlp_vjp", gx, _fd_grad(lambda v: mlp_forward(small, v) @ u, x))
        for i, p in enumerate(small.params()):
            def f(v, i=i, p=p):
                saved = p.copy()
                p[...] = v
                out = mlp_forward(small, x) @ u
                p[...] = saved
                return out
            record("mlp_vjp", gp[i], _fd_grad(f, p.copy()))

    disc = init_mlp([2, 16, 16, 1], rng)
    feat = FeatureExtractor(disc, 2)
    for extractor in (FeatureExtractor(), feat):
        spec = KernelSpec(extractor, 1.0 if extractor.net is None else 4.0, MollifierSpec(0.1, 8))
        eps = gaussian_draws(rng, 8, 2, 0.1)
        for _ in range(probes):
            x = rng.standard_normal(2) * 0.7
            y = x + rng.standard_normal(2) * 0.5
            gx, gy = mollified_kernel_grad(spec, x, y, eps)
            record("mollified_kernel_grad", gx, _fd_grad(lambda v: mollified_kernel(spec, v, y, eps), x))
            record("mollified_kernel_grad", gy, _fd_grad(lambda v: mollified_kernel(spec, x, v, eps), y))

        basis = rng.standard_normal((12, 2))
        est = fit_krr(basis, spec, 1.0, eps=eps)
        for _ in range(probes):
            x = rng.standard_normal(2) * 0.8
            record("grad_log_density", grad_log_density(est, x), _fd_grad(lambda v: log_density(est, v), x))

    mix = GmmTarget([0.3, 0.7], [[-1.0, 0.0], [1.0, 0.5]], [0.8, 0.6])
    conds = [ComponentCondition(mix, 0, 1.5), MaskCondition((1,), [0.3], 0.5), DiscriminatorCondition(disc)]
    for cond in conds:
        for _ in range(probes):
            x = rng.standard_normal(2)
            record("cond_grad", cond.grad(x[None])[0], _fd_grad(lambda v: cond_log_likelihood(cond, v), x))

    gen = init_mlp([2, 16, 16, 3], rng)
    for _ in range(probes):
        z = rng.standard_normal(2)
        gx = rng.standard_normal(3)
        record("latent_pullback", latent_pullback(gen, z[None], gx[None])[0],
               _fd_grad(lambda v: mlp_forward(gen, v) @ gx, z))

    cb = Codebook(rng.standard_normal((6, 2)))
    done = 0
    while done < probes:
        slots = rng.standard_normal((3, 2))
        d2 = ((slots[:, None] - cb.entries[None]) ** 2).sum(-1)
        gap = np.sort(d2, axis=1)
        if np.min(gap[:, 1] - gap[:, 0]) < 1e-2:
            continue  # too close to a Voronoi boundary
        record("reg_grad", reg_grad(cb, slots, 2.5), _fd_grad(lambda v: reg_value(cb, v, 2.5), slots))
        done += 1

    return {
        "seed": seed,
        "tolerance": FD_TOL,
        "fd_step": FD_STEP,
        "fd_max_rel_err_by_path": errs,
        "failed_paths": [p for p in GRADIENT_PATHS if not errs[p] < FD_TOL],
        "passed": bool(all(errs[p] < FD_TOL for p in GRADIENT_PATHS)),
    }


# --------------------------------------------------------------------------- score quality


def median_cosine(scores, probes):
    """Median cosine similarity between estimated scores and the exact ``-x``."""
    exact = -np.asarray(probes, dtype=float)
    c = (scores * exact).sum(1) / (np.linalg.norm(scores, axis=1) * np.linalg.norm(exact, axis=1))
    return float(np.median(c))


def verify_score_quality(n=4096, ridges=(0.1, 1.0, 10.0), probes=20, seed=0, sigma=0.05, m=16):
    """Direction accuracy of KDE and KRR scores on standard-Gaussian samples.

    Probes are uniform in the disk of radius 2; the bandwidth is the median
    heuristic and KRR's ridge is tuned over ``ridges``.
    """
    x = child_rng(seed, 40).standard_normal((n, 2))
    pts = disk_probes(probes, 2.0, seed)
    spec = KernelSpec(FeatureExtractor(), feature_median_bandwidth(FeatureExtractor(), x), MollifierSpec(sigma, m))
    eps = gaussian_draws(child_rng(seed, 41), m, 2, sigma)
    kde = median_cosine(grad_log_density(fit_kde(x, spec, eps=eps), pts), pts)
    krr = [median_cosine(grad_log_density(fit_krr(x, spec, r, eps=eps), pts), pts) for r in ridges]
    best = int(np.argmax(krr))
    return {"n": n, "bandwidth": spec.bandwidth, "kde_median_cosine": kde,
            "krr_ridges": [float(r) for r in ridges], "krr_median_cosine_by_ridge": krr,
            "krr_best_ridge": float(ridges[best]), "krr_best_cosine": krr[best]}


def verify_score_consistency(ns=(256, 512, 1024, 2048), replicates=10, probes=20, seed=0,
                             estimator="kde", ridge=1.0):
    """Mean score error against ``-x`` as the sample size doubles.

    Samples are nested (the first ``n`` rows of one draw per replicate), the
    bandwidth follows Silverman's rule so it shrinks with ``n``, and errors
    are averaged over ``replicates`` independent draws.
    """
    pts = disk_probes(probes, 2.0, seed)
    errs = np.zeros((replicates, len(ns)))
    for r in range(replicates):
        full = child_rng(seed, 42, r).standard_normal((max(ns), 2))
        for j, n in enumerate(ns):
            x = full[:n]
            spec = KernelSpec(FeatureExtractor(), silverman_bandwidth(x), MollifierSpec(0.0, 1))
            est = fit_estimator(estimator, x, spec, ridge, eps=np.zeros((1, 2)))
            errs[r, j] = np.linalg.norm(grad_log_density(est, pts) + pts, axis=1).mean()
    mean = errs.mean(0).tolist()
    return {"ns": list(ns), "replicates": replicates, "estimator": estimator,
            "mean_l2_error": mean, "per_replicate": errs.tolist(),
            "monotone_non_increasing": bool(all(b <= a for a, b in zip(mean, mean[1:])))}
