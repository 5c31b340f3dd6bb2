"""Prediction scoring and benchmark aggregation across replicates."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


@dataclass
class ReplicateScore:
    replicate: int
    framework: str
    rmse: float
    mae: float
    mnll: float
    converged: bool
    wall_time_s: float
    error: str = ""


def _per_function(metric, truth_by_fn: dict, *arg_dicts):
    out = []
    for a in sorted(truth_by_fn):
        args = [np.asarray(d[a], dtype=float) for d in arg_dicts]
        t = np.asarray(truth_by_fn[a], dtype=float)
        for x in args:
            if x.shape != t.shape:
                raise ValueError("misaligned prediction vectors")
        out.append(metric(t, *args))
    return out


def rmse(truth_by_fn: dict, mean_by_fn: dict) -> float:
    """Root of the across-function mean of within-function mean squared errors."""
    mses = _per_function(lambda t, m: np.mean((t - m) ** 2), truth_by_fn, mean_by_fn)
    return float(np.sqrt(np.mean(mses)))


def mae(truth_by_fn: dict, mean_by_fn: dict) -> float:
    vals = _per_function(lambda t, m: np.mean(np.abs(t - m)), truth_by_fn, mean_by_fn)
    return float(np.mean(vals))


def mnll(truth_by_fn: dict, mean_by_fn: dict, sd_by_fn: dict) -> float:
    """Mean negative Gaussian log-loss, averaged within then across functions."""

    def nll(t, m, s):
        if np.any(s <= 0):
            raise ValueError("mnll requires positive predictive sds")
        return np.mean(0.5 * np.log(2.0 * np.pi * s**2) + (t - m) ** 2 / (2.0 * s**2))

    return float(np.mean(_per_function(nll, truth_by_fn, mean_by_fn, sd_by_fn)))


def iqr_filter(scores) -> set:
    """Replicates retained after cross-framework Tukey-fence outlier removal.

    A replicate is flagged when any of its three metrics for any framework
    falls outside [Q1 - 1.5 IQR, Q3 + 1.5 IQR] of that framework's metric
    distribution, or failed to converge; flagged replicates are removed from
    every framework.  Fences are recomputed on the survivors until no new
    replicate is flagged, which makes the filter idempotent.  With fewer
    than 4 scores per framework the filter passes everything through with a
    warning.
    """
    frameworks = sorted({s.framework for s in scores})
    replicates = sorted({s.replicate for s in scores})
    flagged = {s.replicate for s in scores if not s.converged}
    while True:
        new_flags = set()
        for fw in frameworks:
            sub = [s for s in scores
                   if s.framework == fw and s.converged and s.replicate not in flagged]
            if len(sub) < 4:
                warnings.warn(f"too few scores for outlier filtering of {fw!r}", RuntimeWarning)
                continue
            for metric in ("rmse", "mae", "mnll"):
                vals = np.array([getattr(s, metric) for s in sub])
                q1, q3 = np.quantile(vals, [0.25, 0.75])
                lo, hi = q1 - 1.5 * (q3 - q1), q3 + 1.5 * (q3 - q1)
                for s in sub:
                    v = getattr(s, metric)
                    if v < lo or v > hi:
                        new_flags.add(s.replicate)
        if not new_flags:
            break
        flagged |= new_flags
    return {r for r in replicates if r not in flagged}


def aggregate(scores) -> dict:
    """Per-framework metric means and five-number summaries."""
    out = {}
    for fw in sorted({s.framework for s in scores}):
        sub = [s for s in scores if s.framework == fw]
        entry = {"n": len(sub)}
        for metric in ("rmse", "mae", "mnll"):
            vals = np.array([getattr(s, metric) for s in sub])
            entry[f"mean_{metric}"] = float(np.mean(vals))
            entry[f"summary_{metric}"] = [
                float(x) for x in np.quantile(vals, [0.0, 0.25, 0.5, 0.75, 1.0])
            ]
        out[fw] = entry
    return out
