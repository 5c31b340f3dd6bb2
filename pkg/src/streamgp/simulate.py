"""Synthetic data generation: latent truth draws, noise, censoring, missingness."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernels import SAMPLED_SITES, KernelConfig, LatentInputs, build_gram
from .likelihood import Observation, Status
from .linalg import jittered_cholesky


class SimulationError(Exception):
    pass


# Per-cell target counts of the second case study: (function, site, status)
# -> retained rows out of the 50 sampled per cell.
DEFAULT_CELL_COUNTS = {
    (1, "s1", "obs"): 32, (1, "s2", "obs"): 32, (1, "s3", "obs"): 32,
    (2, "s1", "obs"): 28, (2, "s2", "obs"): 28, (2, "s3", "obs"): 28,
    (1, "s1", "bql"): 1, (1, "s2", "bql"): 3, (1, "s3", "bql"): 0,
    (2, "s1", "bql"): 6, (2, "s2", "bql"): 5, (2, "s3", "bql"): 2,
    (1, "s1", "bdl"): 0, (1, "s2", "bdl"): 3, (1, "s3", "bdl"): 3,
    (2, "s1", "bdl"): 2, (2, "s2", "bdl"): 2, (2, "s3", "bdl"): 10,
}


@dataclass
class SimulationConfig:
    t_max: float = 10.0
    dense_points: int = 1000
    obs_per_site: int = 50
    noise_sd: tuple = (0.35, 0.25)
    # (quantification, detection) quantile pairs per function
    censor_quantiles: tuple = ((0.25, 0.15), (0.35, 0.20))
    cell_counts: dict = field(default_factory=lambda: dict(DEFAULT_CELL_COUNTS))
    cell_counts_are_remaining: bool = True
    replicates: int = 20
    master_seed: int = 20240501

    def __post_init__(self):
        for lq_q, ld_q in self.censor_quantiles:
            if not ld_q < lq_q:
                raise SimulationError("detection quantile must lie below quantification")
        if self.obs_per_site > self.dense_points:
            raise SimulationError("cannot subsample more points than the dense grid holds")

    def dense_grid(self) -> np.ndarray:
        return np.linspace(0.0, self.t_max, self.dense_points)

    def obs_indices(self) -> np.ndarray:
        idx = np.round(np.linspace(0, self.dense_points - 1, self.obs_per_site)).astype(int)
        return np.unique(idx)

    def replicate_seed(self, replicate: int) -> int:
        ss = np.random.SeedSequence([self.master_seed, int(replicate)])
        return int(ss.generate_state(1)[0])


@dataclass
class TruthSample:
    times: np.ndarray
    values: dict   # (function, site) -> dense array


def sample_latent_truth(cfg: KernelConfig, inputs: LatentInputs,
                        sim: SimulationConfig, seed: int) -> TruthSample:
    """One joint draw of both latent functions at every site on the dense grid."""
    times = sim.dense_grid()
    rows = [(a, site, float(t)) for a in (1, 2) for site in SAMPLED_SITES for t in times]
    K = build_gram("ff", rows, cfg, inputs)
    L, _ = jittered_cholesky(K)
    rng = np.random.default_rng(seed)
    f = L @ rng.standard_normal(len(rows))
    values = {}
    nt = times.size
    for i, a in enumerate((1, 2)):
        for j, site in enumerate(SAMPLED_SITES):
            start = (i * 3 + j) * nt
            values[(a, site)] = f[start:start + nt].copy()
    return TruthSample(times=times, values=values)


def make_dataset(truth: TruthSample, sim: SimulationConfig, mode: str, seed: int):
    """Noise-corrupt and (for the censored study) censor and thin one replicate.

    ``mode`` is ``"cs1"`` (fully observed) or ``"cs2"`` (percentile censoring
    plus per-cell thinning to the configured retained counts).  Returns the
    observation list in canonical order together with the per-function
    censoring limits (``None`` for cs1).
    """
    if mode not in ("cs1", "cs2"):
        raise SimulationError(f"unknown simulation mode {mode!r}")
    rng = np.random.default_rng(seed)
    idx = sim.obs_indices()
    t_obs = truth.times[idx]
    noisy = {}
    for a in (1, 2):
        for site in SAMPLED_SITES:
            eps = sim.noise_sd[a - 1] * rng.standard_normal(idx.size)
            noisy[(a, site)] = truth.values[(a, site)][idx] + eps
    if mode == "cs1":
        obs = [
            Observation(a, site, float(t), float(v), Status.OBSERVED)
            for a in (1, 2) for site in SAMPLED_SITES
            for t, v in zip(t_obs, noisy[(a, site)])
        ]
        return obs, None

    lq = np.empty(2)
    ld = np.empty(2)
    for a in (1, 2):
        pooled = np.concatenate([noisy[(a, site)] for site in SAMPLED_SITES])
        lq_q, ld_q = sim.censor_quantiles[a - 1]
        lq[a - 1] = np.quantile(pooled, lq_q)
        ld[a - 1] = np.quantile(pooled, ld_q)

    obs = []
    for a in (1, 2):
        for site in SAMPLED_SITES:
            statuses, values = [], []
            for v in noisy[(a, site)]:
                if v <= ld[a - 1]:
                    statuses.append(Status.BELOW_DETECTION)
                    values.append(ld[a - 1])
                elif v <= lq[a - 1]:
                    statuses.append(Status.BETWEEN_LIMITS)
                    values.append(lq[a - 1])
                else:
                    statuses.append(Status.OBSERVED)
                    values.append(v)
            keep = _thin_cell_mask(a, site, statuses, sim, rng)
            for t, v, st, k in zip(t_obs, values, statuses, keep):
                if k:
                    obs.append(Observation(a, site, float(t), float(v), st))
                else:
                    obs.append(Observation(a, site, float(t), None, Status.MISSING))
    from .likelihood import CensoringLimits

    return obs, CensoringLimits(lq=lq, ld=ld)


_STATUS_TAG = {Status.OBSERVED: "obs", Status.BETWEEN_LIMITS: "bql", Status.BELOW_DETECTION: "bdl"}


def _thin_cell_mask(a, site, statuses, sim: SimulationConfig, rng) -> np.ndarray:
    keep = np.ones(len(statuses), dtype=bool)
    for status, tag in _STATUS_TAG.items():
        cell = [i for i, s in enumerate(statuses) if s is status]
        target = sim.cell_counts.get((a, site, tag), len(cell))
        if sim.cell_counts_are_remaining:
            n_keep = target
        else:
            n_keep = len(cell) - target
        if n_keep < 0 or n_keep > len(cell):
            raise SimulationError(
                f"cell ({a}, {site}, {tag}) has {len(cell)} rows, cannot retain {n_keep}"
            )
        drop = rng.choice(len(cell), size=len(cell) - n_keep, replace=False)
        for d in drop:
            keep[cell[d]] = False
    return keep
