"""Experiment orchestration: simulate, fit each framework, predict, score."""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr, ndtri

from .bound import (
    BoundWorkspace,
    ModelParams,
    ParamLayout,
    censored_keys,
    constraints_eval,
    placement_bounds,
    posterior_state,
    PLACEMENT_EPS,
    HET_OFFSET,
)
from .config import FRAMEWORKS, ExperimentConfig
from .kernels import SAMPLED_SITES, KernelConfig, LatentInputs, MovingAverageParams
from .latent import UncertainInputPriors, VariationalPosterior, expected_phi_sq
from .likelihood import Status, init_bound_state
from .metrics import ReplicateScore, mae, mnll, rmse
from .optimize import FitProblem, FitResult, OptimizerConfig, fit
from .predict import PredictionRequest, gpr_log_marginal, gpr_predict, predictive_moments
from .simulate import TruthSample, make_dataset, sample_latent_truth

GPR_PARAM_NAMES = ("xi_0", "xi_1", "l_s_0", "l_s_1", "l_t_0", "l_t_1", "sigma_0", "sigma_1")


def truth_kernel_config(cfg: ExperimentConfig) -> KernelConfig:
    kt = cfg.kernel_truth
    lat = tuple(
        MovingAverageParams(nu_s=kt["nu_s"][a], l_s=kt["l_s"][a],
                            nu_t=kt["nu_t"][a], l_t=kt["l_t"][a])
        for a in range(2)
    )
    return KernelConfig(latent=lat, inducing=lat)


def fixed_inputs(cfg: ExperimentConfig, which: str) -> LatentInputs:
    net = cfg.network
    tau = net["tau_true"] if which == "true" else net["tau_measured"]
    gam = net["gamma_true"] if which == "true" else net["gamma_measured"]
    return LatentInputs(tau=np.asarray(tau), gamma=np.asarray(gam),
                        hprime=np.ones(3), alpha=np.zeros(2))


def priors_from_config(cfg: ExperimentConfig) -> UncertainInputPriors:
    net = cfg.network
    return UncertainInputPriors(
        d_tau=np.asarray(net["tau_measured"]),
        d_gamma=np.asarray(net["gamma_measured"]),
        sd_gamma=float(net["prior_sd_gamma"]),
        eta_mean=float(net["prior_eta_mean"]),
        eta_sd=float(net["prior_eta_sd"]),
    )


_TRUTH_STREAM = 991  # seed-stream tag separating the truth draw from replicate noise


def simulate_truth(cfg: ExperimentConfig) -> TruthSample:
    sim = cfg.simulation_config()
    if cfg.truth_seed is not None:
        seed = int(cfg.truth_seed)
    else:
        seed = int(np.random.SeedSequence([cfg.seed, _TRUTH_STREAM]).generate_state(1)[0])
    return sample_latent_truth(truth_kernel_config(cfg), fixed_inputs(cfg, "true"), sim, seed)


def generate_replicate(cfg: ExperimentConfig, truth: TruthSample, replicate: int):
    sim = cfg.simulation_config()
    return make_dataset(truth, sim, cfg.case_study, sim.replicate_seed(replicate))


# -- data-driven initialization -------------------------------------------------

def _noise_heuristic(observations) -> np.ndarray:
    """Noise-sd guess from lag-1 differences of each function's series."""
    out = np.empty(2)
    for a in (1, 2):
        diffs = []
        for site in SAMPLED_SITES:
            vals = [o.value for o in observations
                    if o.function == a and o.site == site and o.status is Status.OBSERVED]
            if len(vals) > 2:
                diffs.append(np.diff(np.asarray(vals)))
        pooled = np.concatenate(diffs) if diffs else np.array([1.0])
        out[a - 1] = max(np.std(pooled) / np.sqrt(2.0), 1e-2)
    return out


def _kernel_init(observations, cfg: ExperimentConfig):
    sigma0 = _noise_heuristic(observations)
    net = cfg.network
    tau_m = np.asarray(net["tau_measured"], dtype=float)
    # Distinct per-function scales break the symmetry between the two
    # functions' kernels (identical kernels make the inducing prior singular).
    l_s0 = float(np.mean(tau_m**2)) * np.array([0.9, 1.1])
    l_t0 = np.array([0.6, 1.2])
    xi0 = np.empty(2)
    for a in (1, 2):
        vals = np.array([o.value for o in observations
                         if o.function == a and o.status is Status.OBSERVED])
        var_f = max(np.var(vals) - sigma0[a - 1] ** 2, 0.05)
        xi0[a - 1] = np.sqrt(var_f * l_s0[a - 1] ** 2 * l_t0[a - 1] / np.sqrt(np.pi))
    return xi0, l_s0, l_t0, sigma0


# -- GPR baselines ---------------------------------------------------------------

@dataclass
class FrameworkFit:
    framework: str
    kind: str                      # "gpr" or "bgplvm"
    param_names: list
    params: np.ndarray
    fit_result: FitResult
    inputs_which: str = ""         # gpr: which fixed-input column
    independent: bool = False
    m_t: int = 0
    n_censored: int = 0


def _gpr_config_from_vec(v) -> KernelConfig:
    lat = tuple(KernelConfig.expand_xi(v[a], v[2 + a], v[4 + a]) for a in range(2))
    return KernelConfig(latent=lat, inducing=lat)


def fit_gpr(observations, cfg: ExperimentConfig, which: str, seed: int) -> FrameworkFit:
    inputs = fixed_inputs(cfg, which)
    xi0, l_s0, l_t0, sigma0 = _kernel_init(observations, cfg)
    x0 = np.concatenate([xi0, l_s0, l_t0, sigma0])

    def objective(v):
        return gpr_log_marginal(_gpr_config_from_vec(v), inputs, observations, v[6:8])

    def sample_start(rng, start):
        if start == 0:
            return x0
        jitter = np.exp(0.4 * rng.standard_normal(x0.size))
        return x0 * jitter

    bounds = [(1e-3, 1e5)] * 2 + [(1e-2, 1e3)] * 4 + [(1e-3, 1e2)] * 2
    opt = cfg.optimizer_settings()
    problem = FitProblem(objective=objective, sample_start=sample_start, bounds=bounds)
    result = fit(problem, OptimizerConfig(
        n_starts=opt.n_starts, max_iter=opt.max_iter, al_rounds=1, h_fd=opt.h_fd,
        tol_bound=opt.tol_bound, seed=seed,
    ))
    name = "exact_gpr" if which == "true" else "uncertain_gpr"
    return FrameworkFit(framework=name, kind="gpr", param_names=list(GPR_PARAM_NAMES),
                        params=result.x, fit_result=result, inputs_which=which)


# -- variational models ------------------------------------------------------------

def initial_model_params(observations, limits, cfg: ExperimentConfig,
                         layout: ParamLayout) -> ModelParams:
    net = cfg.network
    xi0, l_s0, l_t0, sigma0 = _kernel_init(observations, cfg)
    tau_m = np.asarray(net["tau_measured"], dtype=float)
    post = VariationalPosterior(
        mu_tau=tau_m.copy(),
        sd_tau=np.full(3, 0.25),
        mu_gamma=np.asarray(net["gamma_measured"], dtype=float),
        sd_gamma=np.full(2, 0.1),
        mu_eta=float(net["prior_eta_mean"]),
        sd_eta=0.5 * float(net["prior_eta_sd"]),
    )
    sim = cfg.simulation_config()
    t_ind = np.linspace(0.0, sim.t_max, cfg.m_t)
    params = ModelParams(
        xi=xi0, l_s=l_s0, l_t=l_t0, xi_p=xi0 * np.array([1.05, 0.95]),
        l_sp=l_s0 * np.array([1.1, 0.9]), l_tp=l_t0 * np.array([0.9, 1.1]),
        post=post, hprime=np.ones(3), alpha=np.full(2, float(ndtri(np.sqrt(0.5)))),
        t_inducing=t_ind, sigma=sigma0,
    )
    rows = placement_bounds(params)
    caps = np.full(3, np.inf)
    for i in range(rows.shape[0]):
        caps[int(rows[i, 0])] = min(caps[int(rows[i, 0])], rows[i, 1])
    params.hprime = 0.5 * caps
    if layout.n_censored > 0:
        state = init_bound_state(observations, limits, sigma0)
        keys = censored_keys(observations)
        params.sd_qd = state.sd_qd.copy()
        params.sd_d = state.sd_d.copy()
        params.zeta = np.array([state.zeta[k] for k in keys])
    return params


def _bgplvm_bounds(layout: ParamLayout, sim_t_max: float):
    b = {}
    b["xi"] = b["xi_p"] = (1e-3, 1e5)
    b["l_s"] = b["l_sp"] = (1e-2, 1e3)
    b["l_t"] = b["l_tp"] = (1e-2, 1e3)
    b["mu_tau"] = (-50.0, 50.0)
    b["sd_tau"] = (1e-8, 50.0)
    b["mu_gamma"] = (-10.0, 10.0)
    b["sd_gamma"] = (1e-8, 10.0)
    b["mu_eta"] = (-25.0, 10.0)
    b["sd_eta"] = (1e-8, 10.0)
    b["hprime"] = (1e-8, 1e4)
    b["alpha"] = (-8.0, 8.0)
    b["t_inducing"] = (-2.0, sim_t_max + 2.0)
    b["sigma"] = (1e-3, 1e2)
    b["sd_qd"] = b["sd_d"] = (1e-6, 1e2)
    b["zeta"] = (-50.0, 50.0)
    out = [None] * layout.size
    for name, sl in layout.slices.items():
        lo, hi = b[name]
        for i in range(sl.start, sl.stop):
            out[i] = (lo, hi)
    return out


def clip_geometry(vec, layout: ParamLayout, censored: bool):
    """Project the offset-like coordinates onto their moving boxes.

    The placement caps on the inducing offsets and the heteroskedastic
    variance caps depend on other coordinates; projecting them inside the
    objective keeps every evaluation on the feasible side, where the bound
    is meaningful (past the caps it grows without meaning).
    """
    v = np.asarray(vec, dtype=float).copy()
    sl = layout.slices
    params = layout.from_vector(v)
    rows = placement_bounds(params)
    caps = np.full(3, np.inf)
    for i in range(rows.shape[0]):
        caps[int(rows[i, 0])] = min(caps[int(rows[i, 0])], rows[i, 1])
    hp = np.minimum(params.hprime, np.maximum(caps - PLACEMENT_EPS, 1e-8))
    v[sl["hprime"]] = np.maximum(hp, 1e-8)
    if censored:
        cap = np.sqrt(v[sl["sigma"]] ** 2 + HET_OFFSET)
        v[sl["sd_qd"]] = np.minimum(v[sl["sd_qd"]], cap)
        v[sl["sd_d"]] = np.minimum(v[sl["sd_d"]], cap)
    return v


def restore_feasibility(vec, layout: ParamLayout, censored: bool):
    """Exactly satisfy the equality constraints and clip the box-like slacks.

    The inducing weight parameter on branch 3 is solved from branch 2; the
    variational weight mean on branch 3 is solved from the expected-weight
    identity; offsets and heteroskedastic sds are clipped to their caps.
    """
    v = np.asarray(vec, dtype=float).copy()
    sl = layout.slices
    alpha = v[sl["alpha"]]
    w2 = min(ndtr(alpha[0]) ** 2, 1.0 - 1e-12)
    alpha[0] = ndtri(np.sqrt(w2))
    alpha[1] = ndtri(np.sqrt(1.0 - w2))
    v[sl["alpha"]] = alpha
    mu_g = v[sl["mu_gamma"]]
    sd_g = v[sl["sd_gamma"]]
    target = 1.0 - float(expected_phi_sq(mu_g[0], sd_g[0] ** 2))
    target = min(max(target, 1e-12), 1.0 - 1e-12)
    mu_g[1] = brentq(lambda m: float(expected_phi_sq(m, sd_g[1] ** 2)) - target, -60.0, 60.0,
                     xtol=1e-14)
    v[sl["mu_gamma"]] = mu_g
    return clip_geometry(v, layout, censored)


def fit_bgplvm(observations, limits, cfg: ExperimentConfig, independent: bool,
               seed: int) -> FrameworkFit:
    keys = censored_keys(observations)
    layout = ParamLayout(cfg.m_t, len(keys))
    priors = priors_from_config(cfg)
    censored = len(keys) > 0
    sim = cfg.simulation_config()
    workspace = BoundWorkspace(observations, limits, independent)

    def objective(v):
        # The moving-box coordinates are projected feasible before every
        # evaluation; past their caps the bound loses meaning and explodes.
        vc = clip_geometry(v, layout, censored)
        return workspace.bound(layout.from_vector(vc), priors)

    def al_constraints(v):
        eq, _ = constraints_eval(layout.from_vector(v), censored=censored)
        return eq, np.zeros(0)

    def report_constraints(v):
        return constraints_eval(layout.from_vector(v), censored=censored)

    x_init = layout.to_vector(initial_model_params(observations, limits, cfg, layout))

    def sample_start(rng, start):
        if start == 0:
            return x_init
        v = x_init.copy()
        sl = layout.slices
        for name in ("xi", "l_s", "l_t", "xi_p", "l_sp", "l_tp", "sigma"):
            v[sl[name]] *= np.exp(0.3 * rng.standard_normal(sl[name].stop - sl[name].start))
        v[sl["t_inducing"]] += 0.1 * rng.standard_normal(cfg.m_t)
        v[sl["hprime"]] *= np.exp(0.2 * rng.standard_normal(3))
        return restore_feasibility(v, layout, censored)

    opt = cfg.optimizer_settings()
    problem = FitProblem(
        objective=objective, sample_start=sample_start,
        bounds=_bgplvm_bounds(layout, sim.t_max), constraints=al_constraints,
        report_constraints=report_constraints,
        restore=lambda v: restore_feasibility(v, layout, censored),
    )
    result = fit(problem, OptimizerConfig(
        n_starts=opt.n_starts, max_iter=opt.max_iter, al_rounds=opt.al_rounds,
        h_fd=opt.h_fd, tol_bound=opt.tol_bound, tol_constraint=opt.tol_constraint, seed=seed,
    ))
    name = "in_bgplvm" if independent else "mo_bgplvm"
    return FrameworkFit(framework=name, kind="bgplvm", param_names=list(layout.names),
                        params=result.x, fit_result=result, independent=independent,
                        m_t=cfg.m_t, n_censored=len(keys))


def fit_framework(framework: str, observations, limits, cfg: ExperimentConfig,
                  seed: int) -> FrameworkFit:
    if framework == "exact_gpr":
        return fit_gpr(observations, cfg, "true", seed)
    if framework == "uncertain_gpr":
        return fit_gpr(observations, cfg, "measured", seed)
    if framework == "in_bgplvm":
        return fit_bgplvm(observations, limits, cfg, True, seed)
    if framework == "mo_bgplvm":
        return fit_bgplvm(observations, limits, cfg, False, seed)
    raise ValueError(f"unknown framework {framework!r}")


def predict_framework(fw: FrameworkFit, observations, limits, cfg: ExperimentConfig,
                      request: PredictionRequest):
    if fw.kind == "gpr":
        inputs = fixed_inputs(cfg, fw.inputs_which)
        return gpr_predict(_gpr_config_from_vec(fw.params), inputs, observations,
                           fw.params[6:8], request)
    layout = ParamLayout(fw.m_t, fw.n_censored)
    params = layout.from_vector(fw.params)
    state = posterior_state(params, observations, limits, fw.independent)
    return predictive_moments(state, params.post, request)


# -- replicate scoring --------------------------------------------------------------

def dense_request(truth: TruthSample) -> PredictionRequest:
    rows = [(a, site, float(t)) for a in (1, 2) for site in SAMPLED_SITES for t in truth.times]
    return PredictionRequest(rows=rows)


def truth_by_function(truth: TruthSample) -> dict:
    return {a: np.concatenate([truth.values[(a, s)] for s in SAMPLED_SITES]) for a in (1, 2)}


def split_by_function(request: PredictionRequest, values: np.ndarray) -> dict:
    out = {}
    fns = np.array([r[0] for r in request.rows])
    for a in (1, 2):
        out[a] = np.asarray(values)[fns == a]
    return out


def score_replicate(cfg: ExperimentConfig, truth: TruthSample, replicate: int,
                    frameworks=None) -> list:
    frameworks = frameworks or cfg.frameworks
    observations, limits = generate_replicate(cfg, truth, replicate)
    request = dense_request(truth)
    tb = truth_by_function(truth)
    scores = []
    for framework in frameworks:
        fw_tag = list(FRAMEWORKS).index(framework)
        seed = int(np.random.SeedSequence(
            [cfg.seed, replicate, fw_tag]).generate_state(1)[0])
        t0 = time.perf_counter()
        try:
            fw = fit_framework(framework, observations, limits, cfg, seed)
            pred = predict_framework(fw, observations, limits, cfg, request)
            elapsed = time.perf_counter() - t0
            mean_fn = split_by_function(request, pred.mean_log)
            sd_fn = split_by_function(request, np.maximum(pred.sd_log, 1e-9))
            scores.append(ReplicateScore(
                replicate=replicate, framework=framework,
                rmse=rmse(tb, mean_fn), mae=mae(tb, mean_fn), mnll=mnll(tb, mean_fn, sd_fn),
                converged=fw.fit_result.converged, wall_time_s=elapsed,
            ))
        except Exception as exc:  # record the failure, keep the benchmark running
            scores.append(ReplicateScore(
                replicate=replicate, framework=framework, rmse=float("nan"),
                mae=float("nan"), mnll=float("nan"), converged=False,
                wall_time_s=time.perf_counter() - t0,
                error=f"{type(exc).__name__}: {exc}",
            ))
    return scores


_WORKER_STATE: dict = {}


def _worker_init(cfg_json: str):
    import json as _json

    cfg = ExperimentConfig(**_json.loads(cfg_json))
    _WORKER_STATE["cfg"] = cfg
    _WORKER_STATE["truth"] = simulate_truth(cfg)


def _score_job(args):
    replicate, frameworks = args
    return score_replicate(_WORKER_STATE["cfg"], _WORKER_STATE["truth"], replicate, frameworks)


def run_benchmark(cfg: ExperimentConfig, frameworks=None, threads=None) -> list:
    """Score every (replicate, framework) pair, optionally across processes."""
    frameworks = frameworks or cfg.frameworks
    threads = threads or int(os.environ.get("STREAMGP_THREADS", "0")) or (os.cpu_count() or 1)
    threads = max(1, min(threads, cfg.replicates))
    scores = []
    if threads == 1:
        truth = simulate_truth(cfg)
        for rep in range(cfg.replicates):
            scores.extend(score_replicate(cfg, truth, rep, frameworks))
    else:
        jobs = [(rep, frameworks) for rep in range(cfg.replicates)]
        with ProcessPoolExecutor(max_workers=threads, initializer=_worker_init,
                                 initargs=(cfg.to_json(),)) as pool:
            for result in pool.map(_score_job, jobs):
                scores.extend(result)
    scores.sort(key=lambda s: (s.replicate, s.framework))
    return scores
