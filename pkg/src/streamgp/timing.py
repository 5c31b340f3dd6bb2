"""Wall-clock measurement of one objective evaluation vs data size."""

from __future__ import annotations

import time

import numpy as np

from .bound import ParamLayout, collapsed_bound
from .config import ExperimentConfig
from .kernels import SAMPLED_SITES
from .likelihood import Observation, Status
from .predict import gpr_log_marginal
from .runner import (
    _gpr_config_from_vec,
    fixed_inputs,
    initial_model_params,
    priors_from_config,
)


def _synthetic_dataset(cfg: ExperimentConfig, n_per_site: int, seed: int):
    rng = np.random.default_rng(seed)
    sim = cfg.simulation_config()
    times = np.linspace(0.0, sim.t_max, n_per_site)
    obs = []
    for a in (1, 2):
        for site in SAMPLED_SITES:
            vals = rng.standard_normal(n_per_site)
            obs.extend(Observation(a, site, float(t), float(v), Status.OBSERVED)
                       for t, v in zip(times, vals))
    return obs


def _median_time(func, repeats: int = 3) -> float:
    """Minimum over repeats: the least scheduler-disturbed measurement."""
    func()  # warm-up
    out = []
    for _ in range(max(repeats, 3)):
        t0 = time.perf_counter()
        func()
        out.append(time.perf_counter() - t0)
    return float(np.min(out))


def bound_eval_times(cfg: ExperimentConfig, sizes=(50, 100, 200, 400), repeats: int = 3):
    """Per-evaluation seconds for the collapsed bound and the exact marginal."""
    rows = []
    priors = priors_from_config(cfg)
    inputs = fixed_inputs(cfg, "true")
    for n in sizes:
        obs = _synthetic_dataset(cfg, n, seed=7_000 + n)
        layout = ParamLayout(cfg.m_t, 0)
        params = initial_model_params(obs, None, cfg, layout)

        def eval_bound():
            collapsed_bound(params, obs, None, priors)

        xi0 = np.concatenate([params.xi, params.l_s, params.l_t, params.sigma])
        gpr_cfg = _gpr_config_from_vec(xi0)

        def eval_gpr():
            gpr_log_marginal(gpr_cfg, inputs, obs, xi0[6:8])

        rows.append((n, 6 * n, "mo_bgplvm", _median_time(eval_bound, repeats)))
        rows.append((n, 6 * n, "exact_gpr", _median_time(eval_gpr, repeats)))
    return rows
