"""A reduced end-to-end benchmark: simulate, fit all frameworks, score.

Uses a shrunken grid and light optimizer settings so it finishes in a few
minutes; the full-scale studies run through the command line instead
(`streamgp benchmark`).
"""

import numpy as np

from streamgp.config import ExperimentConfig
from streamgp.metrics import aggregate, iqr_filter
from streamgp.runner import run_benchmark

cfg = ExperimentConfig(
    case_study="cs1", seed=105, truth_seed=3552098277, replicates=2, m_t=6,
    frameworks=["exact_gpr", "uncertain_gpr", "mo_bgplvm"],
    simulation={"dense_points": 200, "obs_per_site": 16},
    optimizer={"n_starts": 1, "max_iter": 40, "al_rounds": 2},
)
scores = run_benchmark(cfg, threads=1)
kept = iqr_filter(scores)
summary = aggregate([s for s in scores if s.replicate in kept])
print(f"\nreplicates retained: {sorted(kept)}")
for fw, entry in sorted(summary.items()):
    print(f"{fw:14s} rmse={entry['mean_rmse']:.4f} mae={entry['mean_mae']:.4f} "
          f"mnll={entry['mean_mnll']:+.4f} (n={entry['n']})")
