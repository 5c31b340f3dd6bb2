"""CSV and snapshot persistence with reproducible formatting."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .likelihood import CensoringLimits, Observation, Status
from .metrics import ReplicateScore
from .simulate import TruthSample

_STATUS_TO_TAG = {
    Status.OBSERVED: "obs",
    Status.BETWEEN_LIMITS: "bql",
    Status.BELOW_DETECTION: "bdl",
    Status.MISSING: "missing",
}
_TAG_TO_STATUS = {v: k for k, v in _STATUS_TO_TAG.items()}


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_dataset(observations, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["function_id", "site_id", "t", "value", "status"])
        for o in observations:
            val = "" if o.value is None else _fmt(o.value)
            w.writerow([o.function, o.site, _fmt(o.time), val, _STATUS_TO_TAG[o.status]])


def read_dataset(path):
    observations = []
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        for row in r:
            status = _TAG_TO_STATUS[row["status"]]
            value = None if row["value"] == "" else float(row["value"])
            observations.append(Observation(
                function=int(row["function_id"]), site=row["site_id"],
                time=float(row["t"]), value=value, status=status,
            ))
    return observations


def limits_from_dataset(observations) -> CensoringLimits | None:
    """Recover per-function limits from censored row values; None if uncensored."""
    lq = np.full(2, np.nan)
    ld = np.full(2, np.nan)
    for o in observations:
        a = o.function - 1
        if o.status is Status.BETWEEN_LIMITS:
            lq[a] = o.value
        elif o.status is Status.BELOW_DETECTION:
            ld[a] = o.value
    if np.all(np.isnan(lq)) and np.all(np.isnan(ld)):
        return None
    if np.any(np.isnan(lq)) or np.any(np.isnan(ld)):
        raise ValueError("dataset has censored rows but limits are not recoverable "
                         "for every function; use the manifest limits")
    return CensoringLimits(lq=lq, ld=ld)


def write_truth(truth: TruthSample, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["function_id", "site_id", "t", "value"])
        for (a, site), vals in sorted(truth.values.items()):
            for t, v in zip(truth.times, vals):
                w.writerow([a, site, _fmt(t), _fmt(v)])


def read_truth(path) -> TruthSample:
    rows: dict = {}
    times: dict = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (int(row["function_id"]), row["site_id"])
            rows.setdefault(key, []).append(float(row["value"]))
            times.setdefault(key, []).append(float(row["t"]))
    any_key = next(iter(times))
    return TruthSample(times=np.asarray(times[any_key]),
                       values={k: np.asarray(v) for k, v in rows.items()})


def write_manifest(path, entries: dict) -> None:
    with open(path, "w") as fh:
        json.dump(entries, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_predictions(result, path) -> None:
    from .predict import to_original_scale

    mean_o, sd_o = result.mean_orig, result.sd_orig
    if mean_o is None:
        mean_o, sd_o = to_original_scale(result.mean_log, result.sd_log)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["function_id", "site_id", "t", "mean_log", "sd_log", "mean_orig", "sd_orig"])
        for (a, site, t), m, s, mo, so in zip(result.rows, result.mean_log, result.sd_log,
                                              mean_o, sd_o):
            w.writerow([a, site, _fmt(t), _fmt(m), _fmt(s), _fmt(mo), _fmt(so)])


def write_metrics(scores, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replicate", "framework", "rmse", "mae", "mnll", "converged", "wall_time_s"])
        for s in scores:
            w.writerow([s.replicate, s.framework, _fmt(s.rmse), _fmt(s.mae), _fmt(s.mnll),
                        int(s.converged), _fmt(s.wall_time_s)])


def read_metrics(path):
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(ReplicateScore(
                replicate=int(row["replicate"]), framework=row["framework"],
                rmse=float(row["rmse"]), mae=float(row["mae"]), mnll=float(row["mnll"]),
                converged=bool(int(row["converged"])), wall_time_s=float(row["wall_time_s"]),
            ))
    return out


def write_boxplot(summary: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["framework", "metric", "min", "q1", "median", "q3", "max", "mean", "n"])
        for fw, entry in sorted(summary.items()):
            for metric in ("rmse", "mae", "mnll"):
                row = [fw, metric] + [_fmt(x) for x in entry[f"summary_{metric}"]]
                row += [_fmt(entry[f"mean_{metric}"]), entry["n"]]
                w.writerow(row)


def write_timing(timing_rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n_per_site", "n_total", "framework", "eval_seconds"])
        for row in timing_rows:
            w.writerow([row[0], row[1], row[2], _fmt(row[3])])


def save_snapshot(fw_fit, cfg_digest: str, seed: int, path, extra: dict | None = None) -> None:
    payload = {
        "framework": fw_fit.framework,
        "kind": fw_fit.kind,
        "param_names": list(fw_fit.param_names),
        "params": [float(x) for x in fw_fit.params],
        "objective": float(fw_fit.fit_result.objective),
        "max_eq_residual": float(fw_fit.fit_result.max_eq_residual),
        "min_slack": float(fw_fit.fit_result.min_slack),
        "converged": bool(fw_fit.fit_result.converged),
        "inputs_which": fw_fit.inputs_which,
        "independent": fw_fit.independent,
        "m_t": fw_fit.m_t,
        "n_censored": fw_fit.n_censored,
        "config_digest": cfg_digest,
        "seed": seed,
        "starts": [
            {
                "start": r.start, "converged": bool(r.converged), "iterations": r.iterations,
                "wall_time_s": r.wall_time_s, "objective": r.objective,
                "max_eq_residual": r.max_eq_residual, "min_slack": r.min_slack,
            }
            for r in fw_fit.fit_result.records
        ],
    }
    if extra:
        payload.update(extra)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_snapshot(path) -> dict:
    with open(path) as fh:
        snap = json.load(fh)
    snap["params"] = np.asarray(snap["params"], dtype=float)
    return snap


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
