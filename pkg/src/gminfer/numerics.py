"""Dense symmetric linear algebra and seeded randomness."""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .errors import NotPositiveDefinite, ShapeMismatch

#: Bit generator used for every random stream; recorded in run manifests.
PRNG_ALGORITHM = "numpy.PCG64"

_JITTER_START = 1e-10
_JITTER_STOP = 1e-4


def make_rng(seed: int) -> np.random.Generator:
    """Return a generator backed by PCG64 seeded with ``seed``."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def child_seed(seed: int, *keys: int) -> int:
    """Derive an independent 63-bit seed from ``seed`` and integer ``keys``.

    The derivation hashes ``(seed, *keys)`` through numpy's SeedSequence, so
    worker ``i`` of a run seeded with ``s`` always receives ``child_seed(s, i)``.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(k) for k in keys]
    state = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1])) & 0x7FFFFFFFFFFFFFFF


def child_rng(seed: int, *keys: int) -> np.random.Generator:
    return make_rng(child_seed(seed, *keys))


def gaussian_draws(rng: np.random.Generator, n: int, dim: int, sigma: float) -> np.ndarray:
    """Draw ``n`` isotropic Gaussian vectors with per-coordinate std ``sigma``.

    Standard normals are always consumed from ``rng`` and then scaled, so two
    calls on identically seeded generators differ only by the ``sigma`` factor.
    ``sigma = 0`` returns exact zeros.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    u = rng.standard_normal((n, dim))
    if sigma == 0:
        return np.zeros((n, dim))
    return sigma * u


def symmetrize(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeMismatch(f"symmetrize needs a square matrix, got shape {a.shape}")
    return 0.5 * (a + a.T)


def cholesky_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``a @ x = b`` for symmetric positive-definite ``a``.

    If the Cholesky factorization fails, a diagonal jitter of
    ``1e-10 * trace(a)/n`` is added and escalated by factors of ten up to
    ``1e-4 * trace(a)/n``. ``a`` is never modified in place.

    Raises
    ------
    ShapeMismatch
        If ``a`` is not square or is not symmetric to 1e-10, or ``b`` has the
        wrong number of rows.
    NotPositiveDefinite
        If the factorization still fails at the largest jitter.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeMismatch(f"expected a square matrix, got shape {a.shape}")
    n = a.shape[0]
    if b.shape[0] != n:
        raise ShapeMismatch(f"right-hand side has {b.shape[0]} rows, matrix has {n}")
    scale = max(np.max(np.abs(a)), 1.0)
    if np.max(np.abs(a - a.T)) > 1e-10 * scale:
        raise ShapeMismatch("matrix is not symmetric within 1e-10")
    if not np.all(np.isfinite(a)):
        raise NotPositiveDefinite("matrix has non-finite entries")

    try:
        factor = scipy.linalg.cho_factor(a, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        factor = None
    if factor is None:
        mean_diag = np.trace(a) / n
        if mean_diag <= 0:
            raise NotPositiveDefinite("matrix has non-positive trace")
        jitter = _JITTER_START
        while factor is None and jitter <= _JITTER_STOP * (1 + 1e-9):
            try:
                factor = scipy.linalg.cho_factor(
                    a + jitter * mean_diag * np.eye(n), lower=True, check_finite=False
                )
            except np.linalg.LinAlgError:
                jitter *= 10
        if factor is None:
            raise NotPositiveDefinite(
                "Cholesky factorization failed after jitter escalation; "
                "the ridge parameter is likely too small"
            )
    return scipy.linalg.cho_solve(factor, b, check_finite=False)
