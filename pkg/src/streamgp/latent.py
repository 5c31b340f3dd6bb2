"""Uncertain-input parameterizations, their priors, posteriors and moments.

Hydrological distances are parameterized as ``h = tau**2``, branch weights as
``w = ndtr(gamma)**2`` and the shared distance-prior variance as
``exp(eta)``; all three latent groups carry independent Gaussian variational
posteriors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.special import owens_t as _owens_t


class ParameterError(Exception):
    pass


@dataclass(frozen=True)
class UncertainInputPriors:
    """Gaussian priors for the distance, weight and log-variance inputs."""

    d_tau: np.ndarray      # measured/estimated means for tau (3,)
    d_gamma: np.ndarray    # measured/estimated means for gamma (2,)
    sd_gamma: float        # shared prior sd for gamma
    eta_mean: float        # hyperprior mean for the shared log-variance
    eta_sd: float          # hyperprior sd

    def __post_init__(self):
        object.__setattr__(self, "d_tau", np.asarray(self.d_tau, dtype=float))
        object.__setattr__(self, "d_gamma", np.asarray(self.d_gamma, dtype=float))
        if self.sd_gamma <= 0.0 or self.eta_sd <= 0.0:
            raise ParameterError("prior standard deviations must be positive")


@dataclass
class VariationalPosterior:
    """Mean/sd pairs for every latent input; all sds must stay positive."""

    mu_tau: np.ndarray
    sd_tau: np.ndarray
    mu_gamma: np.ndarray
    sd_gamma: np.ndarray
    mu_eta: float
    sd_eta: float

    def __post_init__(self):
        self.mu_tau = np.asarray(self.mu_tau, dtype=float)
        self.sd_tau = np.asarray(self.sd_tau, dtype=float)
        self.mu_gamma = np.asarray(self.mu_gamma, dtype=float)
        self.sd_gamma = np.asarray(self.sd_gamma, dtype=float)

    def validate(self) -> None:
        if np.any(self.sd_tau < 0) or np.any(self.sd_gamma < 0) or self.sd_eta < 0:
            raise ParameterError("variational sds must be nonnegative")


def norm_cdf(x):
    return ndtr(x)


def norm_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x**2) / np.sqrt(2.0 * np.pi)


def norm_ppf(q):
    return ndtri(q)


def owens_t(a, b):
    """Owen's T function T(a, b).

    Evaluated with the hybrid series/quadrature routine from scipy, accurate
    to ~1e-14; ``T(a, 0) = 0`` and ``T(a, b)`` is odd in ``b``.
    """
    return _owens_t(np.asarray(a, dtype=float), np.asarray(b, dtype=float))


def kl_gaussian(mu_q, var_q, mu_p, var_p):
    """KL divergence between two univariate Gaussians, KL(q || p)."""
    mu_q, var_q = np.asarray(mu_q, dtype=float), np.asarray(var_q, dtype=float)
    mu_p, var_p = np.asarray(mu_p, dtype=float), np.asarray(var_p, dtype=float)
    if np.any(var_q <= 0.0) or np.any(var_p <= 0.0):
        raise ParameterError("kl_gaussian requires positive variances")
    return 0.5 * (np.log(var_p / var_q) + (var_q + (mu_q - mu_p) ** 2) / var_p - 1.0)


def kl_block(post: VariationalPosterior, priors: UncertainInputPriors) -> float:
    """Total KL penalty of the collapsed bound.

    The distance components are measured against an effective prior variance
    ``exp(mu_eta - sd_eta**2 / 2)``, the printed form of the bound; the
    weight and log-variance components are plain Gaussian KLs.
    """
    post.validate()
    var_tau_prior = np.exp(post.mu_eta - 0.5 * post.sd_eta**2)
    total = float(np.sum(kl_gaussian(post.mu_tau, post.sd_tau**2, priors.d_tau, var_tau_prior)))
    total += float(np.sum(kl_gaussian(post.mu_gamma, post.sd_gamma**2,
                                      priors.d_gamma, priors.sd_gamma**2)))
    total += float(kl_gaussian(post.mu_eta, post.sd_eta**2, priors.eta_mean, priors.eta_sd**2))
    return total


def expected_phi(mu, var):
    """E[ndtr(g)] for g ~ N(mu, var)."""
    mu, var = np.asarray(mu, dtype=float), np.asarray(var, dtype=float)
    return ndtr(mu / np.sqrt(1.0 + var))


def expected_phi_sq(mu, var):
    """E[ndtr(g)**2] for g ~ N(mu, var): the expected branch weight.

    Closed form via Owen's T; reduces to ``ndtr(mu)**2`` at zero variance.
    """
    mu, var = np.asarray(mu, dtype=float), np.asarray(var, dtype=float)
    if np.any(var < 0.0):
        raise ParameterError("variance must be nonnegative")
    a = mu / np.sqrt(1.0 + var)
    b = 1.0 / np.sqrt(1.0 + 2.0 * var)
    return ndtr(a) - 2.0 * _owens_t(a, b)


def posterior_density_h(h, mu_tau, sd_tau):
    """Posterior density of a squared-distance input ``h = tau**2``."""
    h = np.asarray(h, dtype=float)
    if np.any(h <= 0.0):
        raise ParameterError("h must be positive")
    r = np.sqrt(h)
    return (_gauss(-r, mu_tau, sd_tau) + _gauss(r, mu_tau, sd_tau)) / (2.0 * r)


def posterior_density_w(w, mu_gamma, sd_gamma):
    """Posterior density of a branch weight ``w = ndtr(gamma)**2``."""
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0.0) or np.any(w >= 1.0):
        raise ParameterError("w must lie in (0, 1)")
    g = ndtri(np.sqrt(w))
    return _gauss(g, mu_gamma, sd_gamma) / (2.0 * np.sqrt(w) * norm_pdf(g))


def posterior_density_sigma_tau(s2, mu_eta, sd_eta):
    """Posterior density of the shared distance variance ``exp(eta)`` (log-normal)."""
    s2 = np.asarray(s2, dtype=float)
    if np.any(s2 <= 0.0):
        raise ParameterError("variance argument must be positive")
    return _gauss(np.log(s2), mu_eta, sd_eta) / s2


def _gauss(x, mu, sd):
    return np.exp(-0.5 * ((np.asarray(x, dtype=float) - mu) / sd) ** 2) / (sd * np.sqrt(2.0 * np.pi))


def gauss_square_moment(c, mu, var):
    """E[exp(-c * x**2)] for x ~ N(mu, var) and c >= 0, elementwise."""
    c = np.asarray(c, dtype=float)
    denom = 1.0 + 2.0 * c * var
    return np.exp(-c * mu**2 / denom) / np.sqrt(denom)
