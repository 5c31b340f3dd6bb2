"""Collapsed variational lower bound on the model log marginal likelihood.

All optimizable quantities live in one flat vector with a fixed index map.
The bound needs only factorizations of the (small) inducing-covariance
matrix and of its data-corrected counterpart; the data enters through the
expectation statistics and diagonal noise solves, so evaluation cost grows
linearly in the number of observations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from . import psi as psi_mod
from .kernels import INDUCING_SITES, KernelConfig, LatentInputs, canonical_order
from .latent import UncertainInputPriors, VariationalPosterior, expected_phi_sq, kl_block
from .likelihood import (
    CensoringLimits,
    LocalBoundState,
    PseudoData,
    PseudoLayout,
    Status,
    obs_key,
)
from .linalg import FactorizationError, chol_logdet, chol_solve_lower, jittered_cholesky

PLACEMENT_EPS = 1e-6
HET_OFFSET = 1e-3
KMM_RIDGE = 1e-7


class BoundError(Exception):
    pass


@dataclass
class ModelParams:
    """Every optimizable quantity of one model instance."""

    xi: np.ndarray        # latent amplitude products (2,)
    l_s: np.ndarray       # latent spatial lengthscales (2,)
    l_t: np.ndarray       # latent temporal lengthscales (2,)
    xi_p: np.ndarray      # inducing amplitude products (2,)
    l_sp: np.ndarray      # inducing spatial lengthscales (2,)
    l_tp: np.ndarray      # inducing temporal lengthscales (2,)
    post: VariationalPosterior
    hprime: np.ndarray    # inducing junction offsets (3,)
    alpha: np.ndarray     # inducing branch-weight parameters (2,)
    t_inducing: np.ndarray
    sigma: np.ndarray     # observation noise sds (2,)
    sd_qd: np.ndarray = field(default_factory=lambda: np.zeros(2))
    sd_d: np.ndarray = field(default_factory=lambda: np.zeros(2))
    zeta: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        for name in ("xi", "l_s", "l_t", "xi_p", "l_sp", "l_tp", "hprime",
                     "alpha", "t_inducing", "sigma", "sd_qd", "sd_d", "zeta"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))

    def kernel_config(self, independent: bool = False) -> KernelConfig:
        lat = tuple(KernelConfig.expand_xi(self.xi[a], self.l_s[a], self.l_t[a]) for a in range(2))
        ind = tuple(KernelConfig.expand_xi(self.xi_p[a], self.l_sp[a], self.l_tp[a]) for a in range(2))
        return KernelConfig(latent=lat, inducing=ind, independent=independent)

    def latent_inputs(self) -> LatentInputs:
        """Deterministic kernel inputs at the posterior means."""
        return LatentInputs(tau=self.post.mu_tau, gamma=self.post.mu_gamma,
                            hprime=self.hprime, alpha=self.alpha)

    def inducing_rows(self):
        rows = []
        for b in (1, 2):
            for site in INDUCING_SITES:
                for t in self.t_inducing:
                    rows.append((b, site, float(t)))
        return rows

    def bound_state(self, censored_keys) -> LocalBoundState:
        if len(censored_keys) != self.zeta.size:
            raise BoundError("tangency vector does not match the censored rows")
        state = LocalBoundState(sd_qd=self.sd_qd, sd_d=self.sd_d)
        state.zeta = dict(zip(censored_keys, self.zeta))
        return state


def censored_keys(observations):
    """Censored-row keys in pseudo-data order (between-limits block first)."""
    keys = []
    for status in (Status.BETWEEN_LIMITS, Status.BELOW_DETECTION):
        rows = [obs_key(o) for o in observations if o.status is status]
        keys.extend(tuple(r) for r in canonical_order(rows))
    return keys


class ParamLayout:
    """Fixed, total, injective map between ModelParams and a flat vector."""

    _BASE = [("xi", 2), ("l_s", 2), ("l_t", 2), ("xi_p", 2), ("l_sp", 2), ("l_tp", 2),
             ("mu_tau", 3), ("sd_tau", 3), ("mu_gamma", 2), ("sd_gamma", 2),
             ("mu_eta", 1), ("sd_eta", 1), ("hprime", 3), ("alpha", 2)]

    def __init__(self, n_inducing_times: int, n_censored: int = 0):
        self.n_censored = int(n_censored)
        blocks = list(self._BASE)
        blocks.append(("t_inducing", int(n_inducing_times)))
        blocks.append(("sigma", 2))
        if n_censored > 0:
            blocks += [("sd_qd", 2), ("sd_d", 2), ("zeta", int(n_censored))]
        self.slices = {}
        self.names = []
        start = 0
        for name, size in blocks:
            self.slices[name] = slice(start, start + size)
            if size == 1:
                self.names.append(name)
            else:
                self.names.extend(f"{name}_{i}" for i in range(size))
            start += size
        self.size = start

    def to_vector(self, p: ModelParams) -> np.ndarray:
        v = np.empty(self.size)
        post = p.post
        parts = {
            "xi": p.xi, "l_s": p.l_s, "l_t": p.l_t, "xi_p": p.xi_p, "l_sp": p.l_sp,
            "l_tp": p.l_tp, "mu_tau": post.mu_tau, "sd_tau": post.sd_tau,
            "mu_gamma": post.mu_gamma, "sd_gamma": post.sd_gamma,
            "mu_eta": [post.mu_eta], "sd_eta": [post.sd_eta], "hprime": p.hprime,
            "alpha": p.alpha, "t_inducing": p.t_inducing, "sigma": p.sigma,
        }
        if self.n_censored > 0:
            parts.update({"sd_qd": p.sd_qd, "sd_d": p.sd_d, "zeta": p.zeta})
        for name, sl in self.slices.items():
            v[sl] = np.asarray(parts[name], dtype=float)
        return v

    def from_vector(self, v: np.ndarray) -> ModelParams:
        v = np.asarray(v, dtype=float)
        g = lambda name: v[self.slices[name]].copy()
        post = VariationalPosterior(
            mu_tau=g("mu_tau"), sd_tau=g("sd_tau"), mu_gamma=g("mu_gamma"),
            sd_gamma=g("sd_gamma"), mu_eta=float(g("mu_eta")[0]), sd_eta=float(g("sd_eta")[0]),
        )
        kw = {}
        if self.n_censored > 0:
            kw = {"sd_qd": g("sd_qd"), "sd_d": g("sd_d"), "zeta": g("zeta")}
        return ModelParams(
            xi=g("xi"), l_s=g("l_s"), l_t=g("l_t"), xi_p=g("xi_p"), l_sp=g("l_sp"),
            l_tp=g("l_tp"), post=post, hprime=g("hprime"), alpha=g("alpha"),
            t_inducing=g("t_inducing"), sigma=g("sigma"), **kw,
        )


@dataclass
class PosteriorState:
    """Factorized quantities shared by the bound and the predictor."""

    cfg: KernelConfig
    inputs: LatentInputs
    ind_rows: list
    ind_index: psi_mod.InducingIndex
    pseudo: PseudoData
    psi: psi_mod.PsiStatistics
    L_kmm: np.ndarray
    L_q: np.ndarray
    beta: np.ndarray      # Q^{-1} Psi1^T Sigma_l^{-1} y_l


class BoundWorkspace:
    """Static dataset structure for repeated bound evaluations during a fit."""

    def __init__(self, observations, limits: CensoringLimits | None,
                 independent: bool = False):
        self.limits = limits
        self.independent = independent
        self.layout = PseudoLayout.from_observations(observations)
        if self.layout.cens_a.size and limits is None:
            raise BoundError("censored observations need censoring limits")
        self.groups = psi_mod.DataGroups.from_rows(self.layout.rows)
        self.n_rows = len(self.layout.rows)
        self.cens_keys = list(self.layout.cens_keys)
        self._index_cache = {}

    def inducing_index(self, t_inducing: np.ndarray) -> psi_mod.InducingIndex:
        m_t = int(np.asarray(t_inducing).size)
        cached = self._index_cache.get(m_t)
        times = np.tile(np.asarray(t_inducing, dtype=float), 6)
        if cached is None:
            b_idx = np.repeat(np.array([1, 2]), 3 * m_t)
            s_idx = np.tile(np.repeat(np.arange(3), m_t), 2)
            classes = sorted({(int(b), int(s)) for b, s in zip(b_idx, s_idx)})
            lookup = {c: i for i, c in enumerate(classes)}
            class_of = np.array([lookup[(int(b), int(s))] for b, s in zip(b_idx, s_idx)])
            cached = (b_idx, s_idx, classes, class_of)
            self._index_cache[m_t] = cached
        b_idx, s_idx, classes, class_of = cached
        return psi_mod.InducingIndex(b_idx=b_idx, s_idx=s_idx, classes=classes,
                                     class_of=class_of, times=times)

    def state(self, params: ModelParams) -> PosteriorState:
        cfg = params.kernel_config(self.independent)
        cfg.validate()
        params.post.validate()
        pseudo = self.layout.assemble(self.limits, params.sigma, params.sd_qd,
                                      params.sd_d, params.zeta)
        inputs = params.latent_inputs()
        index = self.inducing_index(params.t_inducing)
        stats = psi_mod.psi_all(self.groups, pseudo.var, index, cfg, params.post,
                                inputs, self.n_rows)
        K_mm = psi_mod.inducing_gram(index, cfg, inputs)
        try:
            # A tiny ridge keeps the inducing prior full rank; it acts like
            # independent noise on the inducing variables, so the lower-bound
            # property is preserved exactly.
            scale = float(np.mean(np.diag(K_mm)))
            K_mm = K_mm + (KMM_RIDGE * scale) * np.eye(K_mm.shape[0])
            L_kmm, _ = jittered_cholesky(K_mm)
            L_q, _ = jittered_cholesky(K_mm + stats.Psi2)
        except (FactorizationError, ValueError) as exc:
            raise BoundError(f"singular model: {exc}") from exc
        rhs = stats.Psi1.T @ (pseudo.y / pseudo.var)
        beta = chol_solve_lower(L_q, rhs)
        return PosteriorState(cfg=cfg, inputs=inputs, ind_rows=params.inducing_rows(),
                              ind_index=index, pseudo=pseudo, psi=stats,
                              L_kmm=L_kmm, L_q=L_q, beta=beta)

    def bound(self, params: ModelParams, priors: UncertainInputPriors) -> float:
        return _bound_from_state(self.state(params), params, priors)


def posterior_state(params: ModelParams, observations, limits: CensoringLimits | None,
                    independent: bool = False) -> PosteriorState:
    keys = censored_keys(observations)
    if len(keys) != params.zeta.size:
        raise BoundError("tangency vector does not match the censored rows")
    return BoundWorkspace(observations, limits, independent).state(params)


def optimal_qu(state: PosteriorState):
    """Mean and covariance of the optimal inducing-variable posterior."""
    K_mm = state.L_kmm @ state.L_kmm.T
    half = chol_solve_lower(state.L_q, K_mm)
    sigma_u = K_mm @ half
    sigma_u = 0.5 * (sigma_u + sigma_u.T)
    mu_u = K_mm @ state.beta
    return mu_u, sigma_u


def _bound_from_state(st: PosteriorState, params: ModelParams,
                      priors: UncertainInputPriors) -> float:
    pseudo, stats = st.pseudo, st.psi
    terms = {}
    terms["logdet"] = 0.5 * chol_logdet(st.L_kmm) - 0.5 * chol_logdet(st.L_q)
    terms["norm"] = -0.5 * float(
        np.sum(pseudo.n_obs * np.log(2.0 * np.pi * params.sigma**2))
    )
    quad = float(pseudo.y @ (pseudo.y / pseudo.var))
    rhs = stats.Psi1.T @ (pseudo.y / pseudo.var)
    terms["quadratic"] = -0.5 * (quad - float(rhs @ st.beta))
    terms["censored"] = pseudo.censored_constant()
    trace_corr = float(np.trace(chol_solve_lower(st.L_kmm, stats.Psi2)))
    terms["trace"] = -0.5 * stats.psi0 + 0.5 * trace_corr
    terms["kl"] = -kl_block(params.post, priors)

    total = 0.0
    for name, val in terms.items():
        if not np.isfinite(val):
            raise BoundError(f"non-finite bound term {name!r}")
        total += val
    return float(total)


def collapsed_bound(params: ModelParams, observations, limits: CensoringLimits | None,
                    priors: UncertainInputPriors, independent: bool = False) -> float:
    """Collapsed lower bound on the log marginal likelihood.

    Evaluates at any parameter point, feasible or not; feasibility is the
    optimizer's contract.  Raises ``BoundError`` naming the offending term
    if a non-finite intermediate appears.
    """
    st = posterior_state(params, observations, limits, independent)
    return _bound_from_state(st, params, priors)


def bound_uncensored(params: ModelParams, observations, priors: UncertainInputPriors,
                     independent: bool = False) -> float:
    """Collapsed bound specialized to fully observed data."""
    if any(o.status is not Status.OBSERVED for o in observations):
        raise BoundError("bound_uncensored requires fully observed data")
    return collapsed_bound(params, observations, None, priors, independent)


# -- constraint set ------------------------------------------------------------

def placement_bounds(params: ModelParams) -> np.ndarray:
    """Upper bounds on the inducing offsets implied by the expected kernels.

    One row per constraint: (offset index, bound value).  The bound for an
    offset is ``mu**2 / (1 + 2 c var)`` for each decay rate ``c`` that pairs
    the offset with its sampled site in the expectation statistics.
    """
    mu, var = params.post.mu_tau, params.post.sd_tau**2
    l1, l2 = params.l_s
    l1p, l2p = params.l_sp

    def shrink(m, v, lsq):
        return lsq * m**2 / (2.0 * v + lsq)

    def shrink_mixed(m, v, la_sq, lb_sq):
        return la_sq * lb_sq * m**2 / ((la_sq + lb_sq) * v + la_sq * lb_sq)

    rows = [
        (0, shrink(mu[0], var[0], l1**2)),
        (0, shrink(mu[0], var[0], l2**2)),
        (1, shrink(mu[1], var[1], l1p**2)),
        (1, shrink(mu[1], var[1], l2p**2)),
        (1, shrink_mixed(mu[1], var[1], l1p**2, l2p**2)),
        (2, shrink(mu[2], var[2], l1p**2)),
        (2, shrink(mu[2], var[2], l2p**2)),
        (2, shrink_mixed(mu[2], var[2], l1p**2, l2p**2)),
    ]
    return np.array(rows, dtype=float)


def constraints_eval(params: ModelParams, censored: bool = False):
    """Equality residuals and inequality slacks in a fixed order.

    Equalities: expected branch weights summing to one for the latent and
    the inducing kernels.  Slacks (feasible when nonnegative): the eight
    inducing-placement constraints, then for censored models the four
    heteroskedastic caps.
    """
    post = params.post
    eq = np.array([
        float(expected_phi_sq(post.mu_gamma[0], post.sd_gamma[0] ** 2)
              + expected_phi_sq(post.mu_gamma[1], post.sd_gamma[1] ** 2) - 1.0),
        float(ndtr(params.alpha[0]) ** 2 + ndtr(params.alpha[1]) ** 2 - 1.0),
    ])
    rows = placement_bounds(params)
    slacks = [rows[i, 1] - params.hprime[int(rows[i, 0])] - PLACEMENT_EPS
              for i in range(rows.shape[0])]
    if censored:
        cap = params.sigma**2 + HET_OFFSET
        slacks.extend(cap - params.sd_qd**2)
        slacks.extend(cap - params.sd_d**2)
    return eq, np.array(slacks, dtype=float)
