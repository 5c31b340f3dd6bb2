import numpy as np
import pytest

from streamgp.kernels import KernelConfig, LatentInputs, MovingAverageParams, SAMPLED_SITES
from streamgp.latent import UncertainInputPriors, VariationalPosterior
from streamgp.likelihood import Observation, Status
from streamgp.network import StreamNetwork

# Generating values used throughout the simulation studies.
TAU_TRUE = np.array([3.8730, 2.2361, 3.1623])
GAMMA_TRUE = np.array([0.9808, 0.1199])
TAU_MEASURED = np.array([3.7093, 2.0828, 3.2979])
GAMMA_MEASURED = np.array([0.7899, 0.3035])
SIGMA_TRUE = np.array([0.35, 0.25])

KP1 = MovingAverageParams(nu_s=15.625, l_s=15.0, nu_t=0.495, l_t=0.5)
KP2 = MovingAverageParams(nu_s=18.75, l_s=20.0, nu_t=1.32, l_t=1.7)


@pytest.fixture(scope="session")
def truth_kernels() -> KernelConfig:
    return KernelConfig(latent=(KP1, KP2), inducing=(KP1, KP2))


@pytest.fixture(scope="session")
def truth_inputs() -> LatentInputs:
    return LatentInputs(tau=TAU_TRUE, gamma=GAMMA_TRUE,
                        hprime=np.array([10.0, 3.0, 7.0]), alpha=np.array([0.6, 0.35]))


@pytest.fixture(scope="session")
def paper_network() -> StreamNetwork:
    return StreamNetwork.from_edge_distances(15.0, 5.0, 10.0)


@pytest.fixture(scope="session")
def default_priors() -> UncertainInputPriors:
    return UncertainInputPriors(d_tau=TAU_MEASURED, d_gamma=GAMMA_MEASURED,
                                sd_gamma=0.25, eta_mean=-1.0, eta_sd=0.75)


def make_posterior(sd_scale: float = 0.2) -> VariationalPosterior:
    return VariationalPosterior(
        mu_tau=TAU_MEASURED.copy(), sd_tau=np.full(3, sd_scale),
        mu_gamma=GAMMA_MEASURED.copy(), sd_gamma=np.full(2, 0.5 * sd_scale),
        mu_eta=-1.0, sd_eta=0.3,
    )


def toy_observations(n_times: int = 4, seed: int = 0, sigma=SIGMA_TRUE):
    """Small fully observed dataset with iid values (no model structure)."""
    rng = np.random.default_rng(seed)
    times = np.linspace(0.0, 10.0, n_times)
    return [
        Observation(a, site, float(t), float(rng.standard_normal()), Status.OBSERVED)
        for a in (1, 2) for site in SAMPLED_SITES for t in times
    ]


def delta_state(xi, l_s, l_t, sigma, times, tau=TAU_TRUE, gamma=GAMMA_TRUE,
                eps: float = 1e-6, sd: float = 1e-9, tie_inducing=True,
                xi_p=None, l_sp=None, l_tp=None, hprime=None, alpha=None):
    """Model parameters and matched priors that pin the inputs to point values.

    Variational sds are tiny and every prior matches its posterior, so the
    KL block vanishes and the expectation statistics collapse onto the
    deterministic kernels at the given inputs.
    """
    from streamgp.bound import ModelParams

    xi = np.asarray(xi, dtype=float)
    post = VariationalPosterior(
        mu_tau=np.asarray(tau, dtype=float), sd_tau=np.full(3, sd),
        mu_gamma=np.asarray(gamma, dtype=float), sd_gamma=np.full(2, sd),
        mu_eta=float(np.log(sd**2)), sd_eta=sd,
    )
    priors = UncertainInputPriors(d_tau=np.asarray(tau, dtype=float),
                                  d_gamma=np.asarray(gamma, dtype=float),
                                  sd_gamma=sd, eta_mean=float(np.log(sd**2)), eta_sd=sd)
    params = ModelParams(
        xi=xi, l_s=np.asarray(l_s, dtype=float), l_t=np.asarray(l_t, dtype=float),
        xi_p=np.asarray(xi_p if xi_p is not None else xi, dtype=float),
        l_sp=np.asarray(l_sp if l_sp is not None else l_s, dtype=float),
        l_tp=np.asarray(l_tp if l_tp is not None else l_t, dtype=float),
        post=post,
        hprime=np.asarray(hprime, dtype=float) if hprime is not None
        else np.asarray(tau, dtype=float) ** 2 - eps,
        alpha=np.asarray(alpha if alpha is not None else gamma, dtype=float),
        t_inducing=np.asarray(times, dtype=float),
        sigma=np.asarray(sigma, dtype=float),
    )
    return params, priors
