"""Constrained multi-start maximization of model objectives.

The outer loop is an augmented-Lagrangian treatment of the equality and
nonlinear inequality constraints; the inner solver is a box-constrained
quasi-Newton run driven by central finite-difference gradients.  Positivity
constraints live in the box.  Starts run sequentially and deterministically
under the configured seed; the best feasible start wins, ties broken by the
lowest start index.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

_FAIL_VALUE = 1e12


class OptimizationError(Exception):
    pass


@dataclass
class OptimizerConfig:
    n_starts: int = 40
    max_iter: int = 120            # first AL round; later rounds shrink
    al_rounds: int = 4
    tol_bound: float = 1e-8
    tol_step: float = 1e-8
    tol_constraint: float = 1e-8
    h_fd: float = 1e-3
    seed: int = 0
    rho_init: float = 10.0
    rho_growth: float = 8.0
    rho_max: float = 1e8
    track_history: bool = False

    def __post_init__(self):
        if self.n_starts < 1:
            raise OptimizationError("need at least one start")
        if min(self.tol_bound, self.tol_step, self.tol_constraint, self.h_fd) <= 0:
            raise OptimizationError("tolerances must be positive")


@dataclass
class FitProblem:
    """Objective bundle handed to :func:`fit`.

    ``objective`` is maximized.  ``constraints`` returns (equality residuals,
    inequality slacks with feasibility = slack >= 0); either may be empty.
    ``sample_start`` draws an initial vector for a start index; ``restore``
    optionally projects a solution onto the feasible set exactly.
    """

    objective: callable
    sample_start: callable
    bounds: list
    constraints: callable = None
    restore: callable = None
    report_constraints: callable = None  # feasibility reporting, defaults to constraints


@dataclass
class StartRecord:
    start: int
    converged: bool
    iterations: int
    wall_time_s: float
    objective: float
    max_eq_residual: float
    min_slack: float
    history: list = field(default_factory=list)


@dataclass
class FitResult:
    x: np.ndarray
    objective: float
    records: list
    max_eq_residual: float
    min_slack: float

    @property
    def converged(self) -> bool:
        return any(r.converged for r in self.records)


def gradient(func: callable, x: np.ndarray, h_fd: float = 1e-3) -> np.ndarray:
    """Central finite-difference gradient with per-coordinate relative steps.

    Falls back to a one-sided difference when a probe point is non-finite;
    raises when both sides fail.
    """
    x = np.asarray(x, dtype=float)
    f0 = None
    g = np.empty(x.size)
    for i in range(x.size):
        h = max(h_fd, h_fd * abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        fp, fm = func(xp), func(xm)
        if np.isfinite(fp) and np.isfinite(fm):
            g[i] = (fp - fm) / (2.0 * h)
            continue
        if f0 is None:
            f0 = func(x)
        if not np.isfinite(f0):
            raise OptimizationError("objective non-finite at the evaluation point")
        if np.isfinite(fp):
            g[i] = (fp - f0) / h
        elif np.isfinite(fm):
            g[i] = (f0 - fm) / h
        else:
            raise OptimizationError(f"objective non-finite on both sides of coordinate {i}")
    return g


def _safe_neg(objective, x):
    try:
        val = objective(x)
    except (FloatingPointError, np.linalg.LinAlgError, ArithmeticError, ValueError) as _:
        return _FAIL_VALUE
    except Exception as exc:  # model-level singularities surface as named errors
        if type(exc).__name__ in ("BoundError", "FactorizationError", "KernelError",
                                  "ParameterError", "LikelihoodError"):
            return _FAIL_VALUE
        raise
    if not np.isfinite(val):
        return _FAIL_VALUE
    return -float(val)


def _auglag_penalty(eq, slacks, lam_eq, lam_in, rho):
    val = float(-lam_eq @ eq + 0.5 * rho * (eq @ eq)) if eq.size else 0.0
    if slacks.size:
        shifted = np.maximum(0.0, lam_in - rho * slacks)
        val += float(np.sum(shifted**2 - lam_in**2) / (2.0 * rho))
    return val


def fit(problem: FitProblem, config: OptimizerConfig) -> FitResult:
    rng = np.random.default_rng(config.seed)
    records = []
    best = None
    for start in range(config.n_starts):
        x0 = _draw_feasible_start(problem, rng, start, config)
        t0 = time.perf_counter()
        x, obj, iters, hist = _solve_one(problem, x0, config)
        if problem.restore is not None:
            x = problem.restore(x)
            obj = -_safe_neg(problem.objective, x)
        eq, slacks = _eval_constraints(problem, x, report=True)
        max_eq = float(np.max(np.abs(eq))) if eq.size else 0.0
        min_slack = float(np.min(slacks)) if slacks.size else 0.0
        converged = (
            np.isfinite(obj)
            and obj > -_FAIL_VALUE / 2
            and max_eq <= 1e-6
            and min_slack >= -1e-8
        )
        rec = StartRecord(start=start, converged=converged, iterations=iters,
                          wall_time_s=time.perf_counter() - t0, objective=float(obj),
                          max_eq_residual=max_eq, min_slack=min_slack,
                          history=hist if config.track_history else [])
        records.append(rec)
        if converged and (best is None or obj > best[1] + 0.0):
            best = (x, float(obj), max_eq, min_slack)
    if best is None:
        raise OptimizationError(
            "no feasible converged start; residuals: "
            + ", ".join(f"start {r.start}: eq={r.max_eq_residual:.2e} slack={r.min_slack:.2e}"
                        for r in records)
        )
    return FitResult(x=best[0], objective=best[1], records=records,
                     max_eq_residual=best[2], min_slack=best[3])


def _eval_constraints(problem, x, report: bool = False):
    fn = problem.constraints
    if report and problem.report_constraints is not None:
        fn = problem.report_constraints
    if fn is None:
        return np.zeros(0), np.zeros(0)
    eq, slacks = fn(x)
    return np.atleast_1d(np.asarray(eq, dtype=float)), np.atleast_1d(np.asarray(slacks, dtype=float))


def _draw_feasible_start(problem, rng, start, config):
    last = None
    for _ in range(10):
        x0 = np.asarray(problem.sample_start(rng, start), dtype=float)
        last = x0
        _, slacks = _eval_constraints(problem, x0, report=True)
        if slacks.size == 0 or np.min(slacks) >= 0.0:
            return x0
    raise OptimizationError(f"could not draw a feasible start after 10 tries (start {start}); "
                            f"last slacks: {_eval_constraints(problem, last, report=True)[1]}")


def _solve_one(problem, x0, config):
    x = np.asarray(x0, dtype=float)
    eq, slacks = _eval_constraints(problem, x)
    lam_eq = np.zeros(eq.size)
    lam_in = np.zeros(slacks.size)
    rho = config.rho_init
    prev_viol = np.inf
    total_iters = 0
    history = []
    obj = -_safe_neg(problem.objective, x)
    for rnd in range(config.al_rounds):
        def phi(v):
            base = _safe_neg(problem.objective, v)
            if base >= _FAIL_VALUE / 2:
                return base
            e, s = _eval_constraints(problem, v)
            return base + _auglag_penalty(e, s, lam_eq, lam_in, rho)

        maxiter = config.max_iter if rnd == 0 else max(15, int(0.6 * config.max_iter))
        res = minimize(
            phi, x, method="L-BFGS-B", bounds=problem.bounds,
            jac=lambda v: gradient(phi, v, config.h_fd),
            options={"maxiter": maxiter, "ftol": config.tol_bound, "gtol": 1e-6},
        )
        x = res.x
        total_iters += int(res.nit)
        obj = -_safe_neg(problem.objective, x)
        eq, slacks = _eval_constraints(problem, x)
        viol = max(
            float(np.max(np.abs(eq))) if eq.size else 0.0,
            float(np.max(np.maximum(0.0, -slacks))) if slacks.size else 0.0,
        )
        if config.track_history:
            history.append((rnd, float(obj), viol))
        if viol <= config.tol_constraint and rnd > 0:
            break
        lam_eq = lam_eq - rho * eq
        if slacks.size:
            lam_in = np.maximum(0.0, lam_in - rho * slacks)
        if viol > config.tol_constraint:
            rho = min(rho * config.rho_growth, config.rho_max)
        prev_viol = viol
    return x, obj, total_iters, history
