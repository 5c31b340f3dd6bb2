"""Latent-function prediction at new times for the registered sites.

Two paths: the variational predictor, which reuses the expectation
statistics at the requested points, and the plain GP conditional used by the
fixed-input baselines.  Both predict the noise-free latent functions on the
log scale; a log-normal back-transform recovers moments on the original
positive scale.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .bound import PosteriorState
from .kernels import KernelConfig, LatentInputs, build_gram, temporal_cov
from .likelihood import Status
from .linalg import chol_solve_lower, jittered_cholesky, tri_solve_lower
from .psi import spatial_moments, temporal_cross_matrix


class PredictionError(Exception):
    pass


@dataclass
class PredictionRequest:
    rows: list                     # (function, site, time)
    original_scale: bool = False

    def __post_init__(self):
        for (_a, _s, t) in self.rows:
            if not np.isfinite(t):
                raise PredictionError("request times must be finite")


@dataclass
class PredictionResult:
    rows: list
    mean_log: np.ndarray
    sd_log: np.ndarray
    mean_orig: np.ndarray | None = None
    sd_orig: np.ndarray | None = None
    clipped: int = 0               # rows whose variance was clipped at zero


def _group_request(rows):
    groups: dict = {}
    for i, (a, site, _t) in enumerate(rows):
        groups.setdefault((a, site), []).append(i)
    return groups


def predictive_moments(state: PosteriorState, post, request: PredictionRequest) -> PredictionResult:
    """Gaussian moment approximation of the latent predictive density.

    The mean is linear in the pseudo-data; the variance combines the
    inducing-posterior correction with the expected residual variance at the
    requested point.  Small negative variances from roundoff are clipped at
    zero; anything below -1e-10 triggers a warning.
    """
    M = len(state.ind_rows)
    eye = np.eye(M)
    q_inv = chol_solve_lower(state.L_q, eye)
    k_inv = chol_solve_lower(state.L_kmm, eye)
    B = q_inv - k_inv + np.outer(state.beta, state.beta)

    n = len(request.rows)
    mean = np.empty(n)
    var = np.empty(n)
    clipped = 0
    for (a, site), idx in _group_request(request.rows).items():
        sm = spatial_moments(a, site, state.ind_rows, state.cfg, post, state.inputs)
        times = [request.rows[i][2] for i in idx]
        tvecs = temporal_cross_matrix(a, times, state.ind_rows, state.cfg)
        mu_g = tvecs @ (sm.first * state.beta)
        R = B * sm.second
        quad = np.einsum("tm,mn,tn->t", tvecs, R, tvecs)
        t0 = float(temporal_cov("f", a, "f", a, 0.0, 0.0, state.cfg))
        var_g = quad + sm.var0 * t0 - mu_g**2
        mean[idx] = mu_g
        var[idx] = var_g
    bad = var < -1e-10
    if np.any(bad):
        clipped = int(np.sum(bad))
        warnings.warn(f"clipped {clipped} negative predictive variances", RuntimeWarning)
    var = np.maximum(var, 0.0)
    if not np.all(np.isfinite(mean)) or not np.all(np.isfinite(var)):
        raise PredictionError("non-finite predictive moments")
    result = PredictionResult(rows=list(request.rows), mean_log=mean, sd_log=np.sqrt(var),
                              clipped=clipped)
    if request.original_scale:
        result.mean_orig, result.sd_orig = to_original_scale(mean, np.sqrt(var))
    return result


def gpr_predict(cfg: KernelConfig, inputs: LatentInputs, observations, sigma,
                request: PredictionRequest) -> PredictionResult:
    """Standard zero-mean GP conditional at fixed network inputs.

    Censored rows enter at their recorded limit values with the plain noise
    variance; missing rows are dropped.
    """
    sigma = np.asarray(sigma, dtype=float)
    data = [o for o in observations if o.status is not Status.MISSING]
    rows = [(o.function, o.site, o.time) for o in data]
    y = np.array([o.value for o in data])
    noise = np.array([sigma[o.function - 1] ** 2 for o in data])
    K = build_gram("ff", rows, cfg, inputs) + np.diag(noise)
    L, _ = jittered_cholesky(K)
    alpha = chol_solve_lower(L, y)
    K_star = build_gram("ff", request.rows, cfg, inputs, cols=rows)
    mean = K_star @ alpha
    half = tri_solve_lower(L, K_star.T)
    prior_var = np.empty(len(request.rows))
    for (a, site), idx in _group_request(request.rows).items():
        t0 = request.rows[idx[0]][2]
        prior_var[idx] = float(build_gram("ff", [(a, site, t0)], cfg, inputs)[0, 0])
    var = np.maximum(prior_var - np.sum(half**2, axis=0), 0.0)
    result = PredictionResult(rows=list(request.rows), mean_log=mean, sd_log=np.sqrt(var))
    if request.original_scale:
        result.mean_orig, result.sd_orig = to_original_scale(mean, result.sd_log)
    return result


def gpr_log_marginal(cfg: KernelConfig, inputs: LatentInputs, observations, sigma) -> float:
    """Exact log marginal likelihood of the fixed-input GP baseline."""
    sigma = np.asarray(sigma, dtype=float)
    data = [o for o in observations if o.status is not Status.MISSING]
    rows = [(o.function, o.site, o.time) for o in data]
    y = np.array([o.value for o in data])
    noise = np.array([sigma[o.function - 1] ** 2 for o in data])
    K = build_gram("ff", rows, cfg, inputs) + np.diag(noise)
    L, _ = jittered_cholesky(K)
    half = tri_solve_lower(L, y)
    n = y.size
    return float(-0.5 * (half @ half) - np.sum(np.log(np.diag(L))) - 0.5 * n * np.log(2.0 * np.pi))


def to_original_scale(mean_log, sd_log):
    """Log-normal moments on the positive scale from log-scale moments."""
    mean_log = np.asarray(mean_log, dtype=float)
    sd_log = np.asarray(sd_log, dtype=float)
    mean = np.exp(mean_log + 0.5 * sd_log**2)
    sd = mean * np.sqrt(np.expm1(sd_log**2))
    return mean, sd
