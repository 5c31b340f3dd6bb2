"""Command-line experiment runner.

Subcommands: ``simulate`` writes replicate datasets and the latent truth,
``fit`` trains one framework on one dataset and stores a snapshot,
``predict`` evaluates a snapshot on a time grid, ``benchmark`` runs the full
replicate-by-framework study, and ``psi-check`` cross-validates the
closed-form expectation statistics against the Monte-Carlo oracle.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 partial benchmark failure.
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from . import io
from .bound import ParamLayout
from .config import ConfigError, ExperimentConfig, load_config
from .kernels import SAMPLED_SITES
from .metrics import aggregate, iqr_filter
from .optimize import OptimizationError
from .predict import PredictionRequest
from .simulate import SimulationError
from .runner import (
    fit_framework,
    generate_replicate,
    predict_framework,
    run_benchmark,
    simulate_truth,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_PARTIAL = 4


def _load(args) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "replicates", None) is not None:
        cfg.replicates = args.replicates
    if getattr(args, "mt", None) is not None:
        cfg.m_t = args.mt
    return cfg


def cmd_simulate(args) -> int:
    cfg = _load(args)
    out = io.ensure_dir(args.out)
    sim = cfg.simulation_config()
    truth = simulate_truth(cfg)
    io.write_truth(truth, out / "truth.csv")
    manifest = {"config_digest": cfg.digest(), "seed": cfg.seed,
                "case_study": cfg.case_study, "replicates": {}}
    for rep in range(cfg.replicates):
        observations, limits = generate_replicate(cfg, truth, rep)
        name = f"dataset_{rep:03d}.csv"
        io.write_dataset(observations, out / name)
        entry = {"file": name, "seed": sim.replicate_seed(rep)}
        if limits is not None:
            entry["lq"] = [float(x) for x in limits.lq]
            entry["ld"] = [float(x) for x in limits.ld]
        manifest["replicates"][str(rep)] = entry
    io.write_manifest(out / "manifest.json", manifest)
    print(f"wrote {cfg.replicates} dataset(s) + truth to {out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = _load(args)
    observations = io.read_dataset(args.dataset)
    limits = io.limits_from_dataset(observations)
    seed = args.seed if args.seed is not None else cfg.seed
    fw = fit_framework(args.framework, observations, limits, cfg, seed)
    counts = {}
    for o in observations:
        key = f"f{o.function}_{o.status.value}"
        counts[key] = counts.get(key, 0) + 1
    io.save_snapshot(fw, cfg.digest(), seed, args.out,
                     extra={"dataset": str(args.dataset), "status_counts": counts})
    print(f"{args.framework}: objective {fw.fit_result.objective:.6f} "
          f"converged={fw.fit_result.converged} -> {args.out}")
    return EXIT_OK if fw.fit_result.converged else EXIT_NUMERICAL


def cmd_predict(args) -> int:
    cfg = _load(args)
    snap = io.load_snapshot(args.snapshot)
    observations = io.read_dataset(args.dataset)
    limits = io.limits_from_dataset(observations)
    times = np.linspace(0.0, cfg.simulation_config().t_max, args.grid)
    rows = [(a, site, float(t)) for a in (1, 2) for site in SAMPLED_SITES for t in times]
    request = PredictionRequest(rows=rows, original_scale=True)
    fw = _snapshot_to_fit(snap)
    pred = predict_framework(fw, observations, limits, cfg, request)
    io.write_predictions(pred, args.out)
    print(f"wrote {len(rows)} predictions to {args.out}")
    return EXIT_OK


def _snapshot_to_fit(snap: dict):
    from .optimize import FitResult, StartRecord
    from .runner import FrameworkFit

    records = [StartRecord(start=r["start"], converged=r["converged"],
                           iterations=r["iterations"], wall_time_s=r["wall_time_s"],
                           objective=r["objective"], max_eq_residual=r["max_eq_residual"],
                           min_slack=r["min_slack"]) for r in snap.get("starts", [])]
    result = FitResult(x=snap["params"], objective=snap["objective"], records=records,
                       max_eq_residual=snap["max_eq_residual"], min_slack=snap["min_slack"])
    return FrameworkFit(framework=snap["framework"], kind=snap["kind"],
                        param_names=snap["param_names"], params=snap["params"],
                        fit_result=result, inputs_which=snap.get("inputs_which", ""),
                        independent=snap.get("independent", False),
                        m_t=snap.get("m_t", 0), n_censored=snap.get("n_censored", 0))


def cmd_benchmark(args) -> int:
    cfg = _load(args)
    out = io.ensure_dir(args.out)
    frameworks = [args.framework] if args.framework else None
    scores = run_benchmark(cfg, frameworks=frameworks, threads=args.threads)
    io.write_metrics(scores, out / "metrics.csv")
    kept = iqr_filter(scores)
    filtered = [s for s in scores if s.replicate in kept]
    io.write_boxplot(aggregate(filtered), out / "boxplot.csv")
    timing = _timing_sweep(cfg)
    io.write_timing(timing, out / "timing.csv")
    failures = [s for s in scores if not s.converged]
    for fw, entry in sorted(aggregate(filtered).items()):
        print(f"{fw}: rmse {entry['mean_rmse']:.4f} mae {entry['mean_mae']:.4f} "
              f"mnll {entry['mean_mnll']:.4f} (n={entry['n']})")
    if failures:
        print(f"{len(failures)} job(s) failed to converge", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def _timing_sweep(cfg: ExperimentConfig, sizes=(50, 100, 200, 400)):
    """Per-evaluation wall time of the two objective kinds vs data size."""
    from .timing import bound_eval_times

    return bound_eval_times(cfg, sizes)


def cmd_psi_check(args) -> int:
    from .psicheck import run_psi_check

    worst = run_psi_check(n_configs=args.configs, n_samples=args.samples, seed=args.seed or 0)
    print(f"worst |z| over {args.configs} configurations: {worst:.3f}")
    return EXIT_OK if worst <= 3.0 else EXIT_NUMERICAL


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="streamgp",
                                     description="stream-network GP experiment runner")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, dataset=False):
        p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--out", required=True, help="output path")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--replicates", type=int, default=None)
        p.add_argument("--mt", type=int, default=None)
        if dataset:
            p.add_argument("--dataset", required=True, help="dataset CSV")

    p = sub.add_parser("simulate", help="generate replicate datasets")
    common(p)

    p = sub.add_parser("fit", help="train one framework on one dataset")
    common(p, dataset=True)
    p.add_argument("--framework", required=True,
                   choices=["exact_gpr", "uncertain_gpr", "in_bgplvm", "mo_bgplvm"])

    p = sub.add_parser("predict", help="predict from a fit snapshot")
    common(p, dataset=True)
    p.add_argument("--snapshot", required=True)
    p.add_argument("--grid", type=int, default=200, help="prediction times per site")

    p = sub.add_parser("benchmark", help="full replicate-by-framework study")
    common(p)
    p.add_argument("--framework", default=None,
                   choices=["exact_gpr", "uncertain_gpr", "in_bgplvm", "mo_bgplvm"])
    p.add_argument("--threads", type=int, default=None)

    p = sub.add_parser("psi-check", help="closed-form vs Monte-Carlo statistics check")
    p.add_argument("--config", default=None)
    p.add_argument("--configs", type=int, default=20)
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=None)

    args = parser.parse_args(argv)
    try:
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "fit":
            return cmd_fit(args)
        if args.command == "predict":
            return cmd_predict(args)
        if args.command == "benchmark":
            return cmd_benchmark(args)
        if args.command == "psi-check":
            return cmd_psi_check(args)
    except (ConfigError, SimulationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OptimizationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
