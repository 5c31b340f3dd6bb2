"""Randomized cross-check of the closed-form statistics against the MC oracle."""

from __future__ import annotations

import numpy as np

from .kernels import INDUCING_SITES, SAMPLED_SITES, KernelConfig, LatentInputs, MovingAverageParams
from .latent import VariationalPosterior
from .psi import psi_closed, psi_mc_oracle


def random_psi_config(rng, n_times: int = 2, mt: int = 2):
    """One random model state: kernels, posterior, geometry, design rows."""
    def params():
        return MovingAverageParams(
            nu_s=float(np.exp(rng.uniform(-0.5, 1.5))),
            l_s=float(np.exp(rng.uniform(-0.3, 1.5))),
            nu_t=float(np.exp(rng.uniform(-0.5, 0.5))),
            l_t=float(np.exp(rng.uniform(-0.7, 0.7))),
        )

    cfg = KernelConfig(latent=(params(), params()), inducing=(params(), params()))
    mu_tau = rng.uniform(1.0, 3.0, size=3)
    post = VariationalPosterior(
        mu_tau=mu_tau,
        sd_tau=rng.uniform(0.05, 0.5, size=3),
        mu_gamma=rng.uniform(-1.0, 1.5, size=2),
        sd_gamma=rng.uniform(0.05, 0.5, size=2),
        mu_eta=float(rng.uniform(-2.0, 0.0)),
        sd_eta=float(rng.uniform(0.1, 0.8)),
    )
    inputs = LatentInputs(
        tau=mu_tau.copy(),
        gamma=post.mu_gamma.copy(),
        hprime=rng.uniform(0.1, 0.7) * mu_tau**2,
        alpha=rng.uniform(-1.0, 1.0, size=2),
    )
    t_data = rng.uniform(0.0, 10.0, size=n_times)
    data_rows = [(a, site, float(t)) for a in (1, 2) for site in SAMPLED_SITES for t in t_data]
    row_vars = rng.uniform(0.05, 0.5, size=len(data_rows))
    t_ind = rng.uniform(0.0, 10.0, size=mt)
    ind_rows = [(b, site, float(t)) for b in (1, 2) for site in INDUCING_SITES for t in t_ind]
    return cfg, post, inputs, data_rows, row_vars, ind_rows


def zscores(closed, mc, se, floor: float = 1e-13):
    """Elementwise |closed - mc| / se with exact-zero entries passed through."""
    closed, mc, se = np.asarray(closed), np.asarray(mc), np.asarray(se)
    diff = np.abs(closed - mc)
    z = np.where(se > floor, diff / np.maximum(se, floor), np.where(diff < 1e-10, 0.0, np.inf))
    return z


def run_psi_check(n_configs: int = 20, n_samples: int = 1_000_000, seed: int = 0) -> float:
    """Worst z-score of closed-form vs MC over random configurations."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(n_configs):
        cfg, post, inputs, data_rows, row_vars, ind_rows = random_psi_config(rng)
        closed = psi_closed(data_rows, row_vars, ind_rows, cfg, post, inputs)
        mc, se = psi_mc_oracle(data_rows, row_vars, ind_rows, cfg, post, inputs,
                               n_samples=n_samples, seed=seed + 1000 + k)
        worst = max(worst, float(np.max(zscores(closed.Psi1, mc.Psi1, se.Psi1))))
        worst = max(worst, float(np.max(zscores(closed.Psi2, mc.Psi2, se.Psi2))))
        worst = max(worst, float(np.max(zscores(closed.psi0, mc.psi0, se.psi0))))
    return worst
