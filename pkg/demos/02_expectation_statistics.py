"""Expectation statistics under uncertain distances and branch weights.

The collapsed bound never sees a single distance value: it integrates the
kernel blocks over Gaussian posteriors on the distance parameters and the
branch-weight parameters.  This script evaluates the closed forms and
confirms them against the Monte-Carlo oracle on a small design.
"""

import numpy as np

from streamgp.kernels import INDUCING_SITES, KernelConfig, LatentInputs, MovingAverageParams, SAMPLED_SITES
from streamgp.latent import VariationalPosterior, expected_phi_sq
from streamgp.psi import psi_closed, psi_mc_oracle

p1 = MovingAverageParams(nu_s=15.625, l_s=15.0, nu_t=0.495, l_t=0.5)
p2 = MovingAverageParams(nu_s=18.75, l_s=20.0, nu_t=1.32, l_t=1.7)
cfg = KernelConfig(latent=(p1, p2), inducing=(p1, p2))

post = VariationalPosterior(
    mu_tau=np.array([3.7093, 2.0828, 3.2979]), sd_tau=np.array([0.3, 0.25, 0.2]),
    mu_gamma=np.array([0.7899, 0.3035]), sd_gamma=np.array([0.15, 0.15]),
    mu_eta=-1.0, sd_eta=0.4,
)
inputs = LatentInputs(tau=post.mu_tau, gamma=post.mu_gamma,
                      hprime=np.array([9.0, 3.0, 7.0]), alpha=np.array([0.55, 0.54]))

print("expected branch weights:",
      [round(float(expected_phi_sq(m, s**2)), 4)
       for m, s in zip(post.mu_gamma, post.sd_gamma)])

data_rows = [(a, s, t) for a in (1, 2) for s in SAMPLED_SITES for t in (1.0, 6.0)]
ind_rows = [(b, s, t) for b in (1, 2) for s in INDUCING_SITES for t in (2.0, 8.0)]
row_vars = np.full(len(data_rows), 0.1)

closed = psi_closed(data_rows, row_vars, ind_rows, cfg, post, inputs)
mc, se = psi_mc_oracle(data_rows, row_vars, ind_rows, cfg, post, inputs,
                       n_samples=200_000, seed=0)

z1 = np.abs(closed.Psi1 - mc.Psi1) / np.maximum(se.Psi1, 1e-12)
z2 = np.abs(closed.Psi2 - mc.Psi2) / np.maximum(se.Psi2, 1e-12)
print("trace statistic (closed vs MC):", round(closed.psi0, 4), round(mc.psi0, 4))
print("worst z-score, cross-covariance expectations:", round(float(z1[closed.Psi1 != 0].max()), 2))
print("worst z-score, outer-product expectations:", round(float(z2[closed.Psi2 != 0].max()), 2))
print("outer-product matrix smallest eigenvalue:",
      float(np.linalg.eigvalsh(closed.Psi2).min()).__round__(8))
