"""Dense linear-algebra helpers shared by the model code."""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

JITTER_START = 1e-10
JITTER_MAX = 1e-6


class FactorizationError(Exception):
    """Raised when a matrix stays indefinite after jitter escalation."""


def jittered_cholesky(a: np.ndarray, ridge: float = 0.0):
    """Lower Cholesky factor of ``a`` with escalating diagonal jitter.

    ``ridge`` (relative to the mean diagonal) is always added first; it keeps
    the factorization smooth through nearly rank-deficient regions.  On
    failure, jitter starts at ``1e-10 * mean(diag)`` and grows tenfold until
    ``1e-6 * mean(diag)``; beyond that the matrix is treated as singular.

    Returns ``(L, jitter_used)``.
    """
    a = np.asarray(a, dtype=float)
    scale = float(np.mean(np.diag(a))) if a.size else 1.0
    if ridge > 0.0:
        if not np.isfinite(scale) or scale <= 0.0:
            raise FactorizationError("non-positive diagonal; cannot factorize")
        a = a + (ridge * scale) * np.eye(a.shape[0])
    try:
        return cholesky(a, lower=True), 0.0
    except np.linalg.LinAlgError:
        pass
    if not np.isfinite(scale) or scale <= 0.0:
        raise FactorizationError("non-positive diagonal; cannot factorize")
    jitter = JITTER_START * scale
    eye = np.eye(a.shape[0])
    while jitter <= JITTER_MAX * scale * (1.0 + 1e-12):
        try:
            return cholesky(a + jitter * eye, lower=True), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise FactorizationError("matrix not positive definite after jitter escalation")


def chol_logdet(chol_lower: np.ndarray) -> float:
    """Log-determinant from a lower Cholesky factor."""
    return 2.0 * float(np.sum(np.log(np.diag(chol_lower))))


def chol_solve_lower(chol_lower: np.ndarray, b: np.ndarray) -> np.ndarray:
    return cho_solve((chol_lower, True), b)


def tri_solve_lower(chol_lower: np.ndarray, b: np.ndarray) -> np.ndarray:
    return solve_triangular(chol_lower, b, lower=True)
