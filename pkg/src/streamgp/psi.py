"""Expectation statistics of kernel blocks under the variational posteriors.

The collapsed bound and the predictor need three statistics: the expected
data/inducing cross-covariance matrix, the noise-weighted expectation of its
outer products, and the trace of the expected data-block diagonal.  With the
exponential/exponentiated-quadratic kernel families on the fixed three-site
network these are available in closed form; a Monte-Carlo oracle over the
same deterministic kernels provides validation and a fallback for anything
outside that family.

Structure exploited throughout: the temporal component carries no uncertain
inputs, so every expectation factorizes into a deterministic temporal part
and a spatial part whose randomness lives in the squared distances
(Gaussian-square moments) and branch weights (normal-CDF moments via Owen's
T).  Spatial moments depend only on the (function, site) pair of a data row
and the (function, site) class of an inducing column, never on time stamps,
so all spatial work happens in that small class space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .kernels import (
    INDUCING_SITES,
    SAMPLED_SITES,
    SQRT_2PI,
    KernelConfig,
    LatentInputs,
    spatial_cov,
    temporal_cov,
)
from .latent import VariationalPosterior, expected_phi, expected_phi_sq

_SITE_IDX = {"s1": 0, "s2": 1, "s3": 2}
_ISITE_IDX = {"s1p": 0, "s2p": 1, "s3p": 2}


class CapabilityError(Exception):
    """Closed forms only cover the canonical network and kernel family."""


@dataclass
class PsiStatistics:
    """psi0 is a scalar trace; Psi1 is N x M; Psi2 is M x M symmetric PSD."""

    psi0: float
    Psi1: np.ndarray
    Psi2: np.ndarray


@dataclass
class InducingIndex:
    """Static structure of an inducing-row list."""

    b_idx: np.ndarray
    s_idx: np.ndarray
    classes: list          # distinct (function, spatial index) pairs
    class_of: np.ndarray
    times: np.ndarray

    @classmethod
    def from_rows(cls, ind_rows) -> "InducingIndex":
        for r in ind_rows:
            if r[1] not in INDUCING_SITES:
                raise CapabilityError(f"no closed form for inducing site {r[1]!r}")
        b_idx = np.array([r[0] for r in ind_rows], dtype=int)
        s_idx = np.array([_ISITE_IDX[r[1]] for r in ind_rows], dtype=int)
        times = np.array([r[2] for r in ind_rows], dtype=float)
        classes = sorted({(int(b), int(s)) for b, s in zip(b_idx, s_idx)})
        lookup = {c: i for i, c in enumerate(classes)}
        class_of = np.array([lookup[(int(b), int(s))] for b, s in zip(b_idx, s_idx)])
        return cls(b_idx=b_idx, s_idx=s_idx, classes=classes, class_of=class_of, times=times)


@dataclass
class SpatialMoments:
    """Per-(function, site) spatial expectations over inducing columns."""

    first: np.ndarray      # (M,) expected cross-covariances
    second: np.ndarray     # (M, M) expected products
    var0: float            # expected spatial variance at the site


def _gsm_log(c, mu, var):
    """log E[exp(-c x**2)] for x ~ N(mu, var), elementwise in c."""
    c = np.asarray(c, dtype=float)
    denom = 1.0 + 2.0 * c * var
    return -c * mu**2 / denom - 0.5 * np.log(denom)


def spatial_moment_tables(a: int, site: str, index: InducingIndex, cfg: KernelConfig,
                          post: VariationalPosterior, inputs: LatentInputs):
    """Class-space spatial moments for data function ``a`` at ``site``.

    Returns ``(first_c, second_c, var0)`` with shapes (C,), (C, C) and a
    scalar; exponentials are assembled in log space so infeasible probe
    points degrade gracefully instead of overflowing.
    """
    if site not in SAMPLED_SITES:
        raise CapabilityError(f"no closed form for data site {site!r}")
    C = len(index.classes)
    cls_b = np.array([c[0] for c in index.classes], dtype=int)
    cls_s = np.array([c[1] for c in index.classes], dtype=int)
    pa = cfg.params("f", a)
    lb_s = np.array([cfg.params("u", b).l_s for b in cls_b])
    nub_s = np.array([cfg.params("u", b).nu_s for b in cls_b])
    amp = 2.0 * nub_s * pa.nu_s / (lb_s**2 + pa.l_s**2)
    if cfg.independent:
        amp = amp * (cls_b == a)
    hp = inputs.hprime
    A = ndtr(inputs.alpha)
    j = _SITE_IDX[site]
    mu_t, var_t = post.mu_tau[j], post.sd_tau[j] ** 2
    m_g = expected_phi(post.mu_gamma, post.sd_gamma**2)
    q_g = expected_phi_sq(post.mu_gamma, post.sd_gamma**2)

    if site in ("s2", "s3"):
        k = j - 1
        c = 1.0 / (2.0 * lb_s**2)
        off = np.where(cls_s == j, hp[j] * c, -hp[0] * c)
        wv = np.where(cls_s == j, 1.0, np.where(cls_s == 0, A[k], 0.0))
        wm = np.outer(wv, wv)
        var0 = pa.nu_s**2 / pa.l_s**2
    else:
        c = np.full(C, 1.0 / (2.0 * pa.l_s**2))
        off = np.where(cls_s == 0, hp[0], -hp[cls_s]) * c
        EW = A[0] * m_g[0] + A[1] * m_g[1]
        EW2 = A[0] ** 2 * q_g[0] + 2.0 * A[0] * A[1] * m_g[0] * m_g[1] + A[1] ** 2 * q_g[1]
        EWG = A * q_g + A[::-1] * m_g[0] * m_g[1]
        kappa = (lb_s**2 + pa.l_s**2) / (2.0 * lb_s**2 * pa.l_s**2)
        Em = np.where(cls_s == 0, np.exp(-hp[0] * kappa), 0.0)
        wv = np.where(cls_s == 0, 1.0 - (1.0 - EW) * Em, m_g[np.maximum(cls_s - 1, 0)])
        wm = np.empty((C, C))
        for i in range(C):
            for k2 in range(C):
                si, sj = cls_s[i], cls_s[k2]
                if si == 0 and sj == 0:
                    wm[i, k2] = (1.0 - (1.0 - EW) * (Em[i] + Em[k2])
                                 + (1.0 - 2.0 * EW + EW2) * Em[i] * Em[k2])
                elif si == 0 or sj == 0:
                    k = max(si, sj) - 1
                    E0 = Em[i] if si == 0 else Em[k2]
                    wm[i, k2] = m_g[k] - E0 * (m_g[k] - EWG[k])
                elif si == sj:
                    wm[i, k2] = q_g[si - 1]
                else:
                    wm[i, k2] = m_g[0] * m_g[1]
        split0 = np.exp(_gsm_log(1.0 / pa.l_s**2, mu_t, var_t))
        var0 = pa.nu_s**2 / pa.l_s**2 * (1.0 - (1.0 - (q_g[0] + q_g[1])) * split0)

    # Infeasible probe points can push the exponent past the overflow line;
    # the resulting non-finite entries surface as a factorization failure.
    with np.errstate(over="ignore", invalid="ignore"):
        first_c = amp * wv * np.exp(off + _gsm_log(c, mu_t, var_t))
        log2 = off[:, None] + off[None, :] + _gsm_log(c[:, None] + c[None, :], mu_t, var_t)
        second_c = amp[:, None] * amp[None, :] * wm * np.exp(log2)
    return first_c, second_c, float(var0)


def spatial_moments(a: int, site: str, ind_rows, cfg: KernelConfig,
                    post: VariationalPosterior, inputs: LatentInputs) -> SpatialMoments:
    """Column-space spatial moments (class tables lifted to the M columns)."""
    index = ind_rows if isinstance(ind_rows, InducingIndex) else InducingIndex.from_rows(ind_rows)
    first_c, second_c, var0 = spatial_moment_tables(a, site, index, cfg, post, inputs)
    co = index.class_of
    return SpatialMoments(first=first_c[co], second=second_c[np.ix_(co, co)], var0=var0)


def temporal_cross_matrix(a: int, times, index, cfg: KernelConfig) -> np.ndarray:
    """Temporal cross-covariances of data function ``a`` at ``times`` vs all columns."""
    if not isinstance(index, InducingIndex):
        index = InducingIndex.from_rows(index)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    pa = cfg.params("f", a)
    lt2_by_b = np.array([cfg.params("u", 1).l_t ** 2, cfg.params("u", 2).l_t ** 2])
    nut_by_b = np.array([cfg.params("u", 1).nu_t, cfg.params("u", 2).nu_t])
    lt2 = lt2_by_b[index.b_idx - 1]
    nut = nut_by_b[index.b_idx - 1]
    ssq = lt2[None, :] + pa.l_t**2
    lag = times[:, None] - index.times[None, :]
    return SQRT_2PI * pa.nu_t * nut[None, :] / np.sqrt(ssq) * np.exp(-(lag**2) / (2.0 * ssq))


def inducing_gram(index: InducingIndex, cfg: KernelConfig, inputs: LatentInputs) -> np.ndarray:
    """Inducing covariance matrix assembled from class tables (deterministic)."""
    C = len(index.classes)
    S_c = np.empty((C, C))
    for i, (bi, si) in enumerate(index.classes):
        for k, (bk, sk) in enumerate(index.classes):
            S_c[i, k] = float(spatial_cov("u", bi, INDUCING_SITES[si],
                                          "u", bk, INDUCING_SITES[sk], cfg, inputs))
    co = index.class_of
    S = S_c[np.ix_(co, co)]
    lt2_by_b = np.array([cfg.params("u", 1).l_t ** 2, cfg.params("u", 2).l_t ** 2])
    nut_by_b = np.array([cfg.params("u", 1).nu_t, cfg.params("u", 2).nu_t])
    lt2 = lt2_by_b[index.b_idx - 1]
    nut = nut_by_b[index.b_idx - 1]
    ssq = lt2[:, None] + lt2[None, :]
    lag = index.times[:, None] - index.times[None, :]
    T = SQRT_2PI * nut[:, None] * nut[None, :] / np.sqrt(ssq) * np.exp(-(lag**2) / (2.0 * ssq))
    K = S * T
    return 0.5 * (K + K.T)


@dataclass
class DataGroups:
    """Data rows bucketed by (function, site), with times and row indices."""

    keys: list
    row_idx: dict
    times: dict

    @classmethod
    def from_rows(cls, data_rows) -> "DataGroups":
        for r in data_rows:
            if r[1] not in SAMPLED_SITES:
                raise CapabilityError(f"no closed form for data site {r[1]!r}")
        row_idx: dict = {}
        times: dict = {}
        for n, (a, site, t) in enumerate(data_rows):
            row_idx.setdefault((a, site), []).append(n)
            times.setdefault((a, site), []).append(float(t))
        keys = sorted(row_idx)
        return cls(keys=keys,
                   row_idx={k: np.array(v, dtype=int) for k, v in row_idx.items()},
                   times={k: np.array(times[k]) for k in keys})


def psi_all(groups: DataGroups, row_vars, index: InducingIndex, cfg: KernelConfig,
            post: VariationalPosterior, inputs: LatentInputs,
            n_rows: int) -> PsiStatistics:
    """All three statistics in one pass over the data groups."""
    row_vars = np.asarray(row_vars, dtype=float)
    M = index.b_idx.size
    co = index.class_of
    lift = np.ix_(co, co)
    Psi1 = np.empty((n_rows, M))
    Psi2 = np.zeros((M, M))
    psi0 = 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        for (a, site) in groups.keys:
            idx = groups.row_idx[(a, site)]
            first_c, second_c, var0 = spatial_moment_tables(a, site, index, cfg, post, inputs)
            tmat = temporal_cross_matrix(a, groups.times[(a, site)], index, cfg)
            Psi1[idx, :] = tmat * first_c[co][None, :]
            w = 1.0 / row_vars[idx]
            tgram = (tmat * w[:, None]).T @ tmat
            Psi2 += second_c[lift] * tgram
            t0 = float(temporal_cov("f", a, "f", a, 0.0, 0.0, cfg))
            psi0 += var0 * t0 * float(np.sum(w))
    return PsiStatistics(psi0=float(psi0), Psi1=Psi1, Psi2=0.5 * (Psi2 + Psi2.T))


def psi_closed(data_rows, row_vars, ind_rows, cfg, post, inputs) -> PsiStatistics:
    groups = DataGroups.from_rows(data_rows)
    index = ind_rows if isinstance(ind_rows, InducingIndex) else InducingIndex.from_rows(ind_rows)
    return psi_all(groups, row_vars, index, cfg, post, inputs, len(data_rows))


def psi1_closed(data_rows, ind_rows, cfg, post, inputs) -> np.ndarray:
    """Expected data/inducing cross-covariance matrix, row per data row."""
    dummy_vars = np.ones(len(data_rows))
    return psi_closed(data_rows, dummy_vars, ind_rows, cfg, post, inputs).Psi1


def psi2_closed(data_rows, row_vars, ind_rows, cfg, post, inputs) -> np.ndarray:
    """Noise-weighted expectation of stacked cross-covariance outer products."""
    return psi_closed(data_rows, row_vars, ind_rows, cfg, post, inputs).Psi2


def psi0_closed(data_rows, row_vars, ind_rows, cfg, post, inputs) -> float:
    """Trace of the expected data-block diagonal against the noise covariance."""
    return psi_closed(data_rows, row_vars, ind_rows, cfg, post, inputs).psi0


def psi_mc_oracle(data_rows, row_vars, ind_rows, cfg, post, inputs,
                  n_samples: int = 100_000, seed: int = 0, batch: int = 50_000):
    """Monte-Carlo estimate of all three statistics with standard errors.

    Samples the distance and weight inputs from their posteriors, evaluates
    the deterministic kernel blocks per sample, and averages.  All
    per-sample accumulation happens in the small inducing class space, so
    memory stays flat in the number of inducing columns.

    Returns ``(PsiStatistics, PsiStatistics)`` holding means and per-entry
    standard errors.  Deterministic under a fixed seed.
    """
    if n_samples < 1000:
        raise ValueError("MC oracle needs at least 1e3 samples")
    rng = np.random.default_rng(seed)
    row_vars = np.asarray(row_vars, dtype=float)
    N, M = len(data_rows), len(ind_rows)
    groups = DataGroups.from_rows(data_rows)
    index = InducingIndex.from_rows(ind_rows)
    gkeys = groups.keys
    G = len(gkeys)
    classes = index.classes
    C = len(classes)
    class_of = index.class_of

    tmats, tgrams, w0 = {}, {}, {}
    for (a, site) in gkeys:
        idx = groups.row_idx[(a, site)]
        tm = temporal_cross_matrix(a, groups.times[(a, site)], index, cfg)
        tmats[(a, site)] = tm
        w = 1.0 / row_vars[idx]
        tgrams[(a, site)] = (tm * w[:, None]).T @ tm
        w0[(a, site)] = float(temporal_cov("f", a, "f", a, 0.0, 0.0, cfg)) * float(np.sum(w))

    s1_acc = np.zeros((G, C))
    s1_sq = np.zeros((G, C))
    p_acc = np.zeros((G, C, C))
    pp_acc = np.zeros((G, G, C, C))
    s0_acc = 0.0
    s0_sq = 0.0

    done = 0
    while done < n_samples:
        nb = min(batch, n_samples - done)
        tau = post.mu_tau + post.sd_tau * rng.standard_normal((nb, 3))
        gam = post.mu_gamma + post.sd_gamma * rng.standard_normal((nb, 2))
        smp = LatentInputs(tau=tau, gamma=gam, hprime=inputs.hprime, alpha=inputs.alpha)
        sp = np.empty((G, nb, C))
        psi0_b = np.zeros(nb)
        for gi, (a, site) in enumerate(gkeys):
            for ci, (b, s) in enumerate(classes):
                sp[gi, :, ci] = spatial_cov("u", b, INDUCING_SITES[s], "f", a, site, cfg, smp)
            var_a = spatial_cov("f", a, site, "f", a, site, cfg, smp)
            psi0_b += var_a * w0[(a, site)]
        s1_acc += sp.sum(axis=1)
        s1_sq += (sp**2).sum(axis=1)
        for gi in range(G):
            p_acc[gi] += np.einsum("sc,sd->cd", sp[gi], sp[gi])
            for gj in range(gi, G):
                u = sp[gi] * sp[gj]
                cross = np.einsum("sc,sd->cd", u, u)
                pp_acc[gi, gj] += cross
                if gj != gi:
                    pp_acc[gj, gi] += cross
        s0_acc += psi0_b.sum()
        s0_sq += (psi0_b**2).sum()
        done += nb

    S = float(n_samples)
    Psi1 = np.empty((N, M))
    Psi1_se = np.empty((N, M))
    for gi, (a, site) in enumerate(gkeys):
        idx = groups.row_idx[(a, site)]
        mean_c = s1_acc[gi] / S
        se_c = np.sqrt(np.maximum(s1_sq[gi] / S - mean_c**2, 0.0) / S)
        tm = tmats[(a, site)]
        Psi1[idx, :] = tm * mean_c[class_of][None, :]
        Psi1_se[idx, :] = np.abs(tm) * se_c[class_of][None, :]

    lift = np.ix_(class_of, class_of)
    Psi2 = np.zeros((M, M))
    second = np.zeros((M, M))
    for gi, gkey in enumerate(gkeys):
        Psi2 += tgrams[gkey] * (p_acc[gi] / S)[lift]
        for gj, gkey2 in enumerate(gkeys):
            second += tgrams[gkey] * tgrams[gkey2] * (pp_acc[gi, gj] / S)[lift]
    Psi2_se = np.sqrt(np.maximum(second - Psi2**2, 0.0) / S)
    psi0 = s0_acc / S
    psi0_se = float(np.sqrt(max(s0_sq / S - psi0**2, 0.0) / S))
    return (
        PsiStatistics(psi0=float(psi0), Psi1=Psi1, Psi2=Psi2),
        PsiStatistics(psi0=psi0_se, Psi1=Psi1_se, Psi2=Psi2_se),
    )
