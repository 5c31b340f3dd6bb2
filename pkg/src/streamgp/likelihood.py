"""Observation model: Gaussian noise, censored terms and their local bounds.

Censored observations enter the likelihood through normal-CDF terms that
break conjugacy.  Each such term is replaced by a quadratic lower bound on
its logarithm, tangent at an adjustable point; the bounds turn censored rows
into pseudo-observations that slot into the same Gaussian algebra as the
uncensored rows.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_ndtr

from .kernels import canonical_order


class Status(enum.Enum):
    OBSERVED = "obs"
    BETWEEN_LIMITS = "bql"
    BELOW_DETECTION = "bdl"
    MISSING = "missing"


@dataclass(frozen=True)
class Observation:
    function: int          # 1 or 2
    site: str
    time: float
    value: float | None    # log scale; None for missing rows
    status: Status

    def __post_init__(self):
        if self.status is Status.MISSING and self.value is not None:
            raise LikelihoodError("missing observations carry no value")
        if self.status is not Status.MISSING and self.value is None:
            raise LikelihoodError("non-missing observations need a value")


@dataclass(frozen=True)
class CensoringLimits:
    """Per-function quantification and detection limits on the log scale."""

    lq: np.ndarray  # (2,)
    ld: np.ndarray  # (2,)

    def __post_init__(self):
        object.__setattr__(self, "lq", np.asarray(self.lq, dtype=float))
        object.__setattr__(self, "ld", np.asarray(self.ld, dtype=float))
        if np.any(self.ld >= self.lq):
            raise LikelihoodError("detection limit must lie below the quantification limit")


@dataclass
class LocalBoundState:
    """Tangency points and extra variances for the censored-term bounds.

    ``zeta`` maps a censored observation key ``(function, site, time)`` to
    its tangency point.  ``sd_qd``/``sd_d`` are per-function heteroskedastic
    standard deviations added to the noise inside the CDF terms.
    """

    zeta: dict = field(default_factory=dict)
    sd_qd: np.ndarray = field(default_factory=lambda: np.zeros(2))
    sd_d: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        self.sd_qd = np.asarray(self.sd_qd, dtype=float)
        self.sd_d = np.asarray(self.sd_d, dtype=float)


class LikelihoodError(Exception):
    pass


def obs_key(o: Observation):
    return (o.function, o.site, o.time)


def init_bound_state(observations, limits: CensoringLimits, sigmas) -> LocalBoundState:
    """Default tangency points: mid-interval for between-limit rows, one noise
    sd below the detection limit for below-detection rows."""
    sigmas = np.asarray(sigmas, dtype=float)
    state = LocalBoundState(sd_qd=0.5 * sigmas, sd_d=0.5 * sigmas)
    for o in observations:
        a = o.function - 1
        if o.status is Status.BETWEEN_LIMITS:
            state.zeta[obs_key(o)] = 0.5 * (limits.lq[a] + limits.ld[a])
        elif o.status is Status.BELOW_DETECTION:
            state.zeta[obs_key(o)] = limits.ld[a] - sigmas[a]
    return state


# -- exact censored terms ----------------------------------------------------

def _log_between(f, ld, lq, sd_tot):
    """log P(ld < Y <= lq) for Y ~ N(f, sd_tot**2), stable in both tails.

    Written via the better-conditioned tail: distribution functions when the
    mass sits below the limits, survival functions when it sits above.
    """
    zd = (np.asarray(f, dtype=float) - ld) / sd_tot
    zq = (np.asarray(f, dtype=float) - lq) / sd_tot
    upper = zd + zq > 0
    hi = np.where(upper, log_ndtr(-zq), log_ndtr(zd))
    lo = np.where(upper, log_ndtr(-zd), log_ndtr(zq))
    return hi + np.log1p(-np.exp(np.minimum(lo - hi, -1e-300)))


def _log_below(f, ld, sd_tot):
    """log P(Y <= ld) for Y ~ N(f, sd_tot**2)."""
    return log_ndtr((ld - np.asarray(f)) / sd_tot)


def _log_norm_pdf(z):
    return -0.5 * np.asarray(z, dtype=float) ** 2 - 0.5 * np.log(2.0 * np.pi)


def _dlog_between(f, ld, lq, sd_tot):
    zd = (np.asarray(f, dtype=float) - ld) / sd_tot
    zq = (np.asarray(f, dtype=float) - lq) / sd_tot
    log_p = _log_between(f, ld, lq, sd_tot)
    rd = np.exp(_log_norm_pdf(zd) - log_p)
    rq = np.exp(_log_norm_pdf(zq) - log_p)
    return (rd - rq) / sd_tot


def _dlog_below(f, ld, sd_tot):
    z = (ld - np.asarray(f)) / sd_tot
    return -np.exp(_log_norm_pdf(z) - log_ndtr(z)) / sd_tot


def exact_censored_loglik(f_by_key: dict, observations, limits: CensoringLimits,
                          sigmas, state: LocalBoundState) -> float:
    """Exact mixed log-likelihood at given latent values (validation oracle).

    ``f_by_key`` maps ``(function, site, time)`` to the latent value; missing
    rows never contribute.
    """
    sigmas = np.asarray(sigmas, dtype=float)
    total = 0.0
    for o in observations:
        if o.status is Status.MISSING:
            continue
        a = o.function - 1
        f = f_by_key[obs_key(o)]
        if o.status is Status.OBSERVED:
            total += -0.5 * np.log(2.0 * np.pi * sigmas[a] ** 2)
            total += -0.5 * (o.value - f) ** 2 / sigmas[a] ** 2
        elif o.status is Status.BETWEEN_LIMITS:
            sd_tot = np.sqrt(sigmas[a] ** 2 + state.sd_qd[a] ** 2)
            total += float(_log_between(f, limits.ld[a], limits.lq[a], sd_tot))
        else:
            sd_tot = np.sqrt(sigmas[a] ** 2 + state.sd_d[a] ** 2)
            total += float(_log_below(f, limits.ld[a], sd_tot))
    return float(total)


# -- local quadratic bounds ---------------------------------------------------

def local_bound_coeffs(status: Status, zeta: float, lq: float, ld: float,
                       sigma2: float, sigma2_het: float):
    """Linear and constant coefficients of the tangent quadratic bound.

    The bound on the log censored term has the shape
    ``-f**2/(2 v) + b (f - shift)/v + c/v`` with total variance
    ``v = sigma2 + sigma2_het`` and ``shift`` equal to ``lq + ld`` for
    between-limit terms and ``2 ld`` for below-detection terms.  ``b`` and
    ``c`` are solved from value and slope matching at ``zeta``; the log
    censored terms have curvature no steeper than ``-1/v`` everywhere, so the
    tangent quadratic is a global lower bound.
    """
    if sigma2 <= 0.0 or sigma2_het < 0.0:
        raise LikelihoodError("variances must be positive")
    if status is Status.BETWEEN_LIMITS and not ld < lq:
        raise LikelihoodError("degenerate censoring limits")
    v = sigma2 + sigma2_het
    sd_tot = np.sqrt(v)
    if status is Status.BETWEEN_LIMITS:
        val = float(_log_between(zeta, ld, lq, sd_tot))
        slope = float(_dlog_between(zeta, ld, lq, sd_tot))
        shift = lq + ld
    elif status is Status.BELOW_DETECTION:
        val = float(_log_below(zeta, ld, sd_tot))
        slope = float(_dlog_below(zeta, ld, sd_tot))
        shift = 2.0 * ld
    else:
        raise LikelihoodError(f"no local bound for status {status}")
    b = zeta + v * slope
    c = v * val + 0.5 * zeta**2 - b * zeta + b * shift
    return b, c


def local_bound_log(f, status: Status, zeta: float, lq: float, ld: float,
                    sigma2: float, sigma2_het: float):
    """Evaluate the tangent quadratic bound on the log censored term."""
    b, c = local_bound_coeffs(status, zeta, lq, ld, sigma2, sigma2_het)
    v = sigma2 + sigma2_het
    shift = lq + ld if status is Status.BETWEEN_LIMITS else 2.0 * ld
    f = np.asarray(f, dtype=float)
    return -0.5 * f**2 / v + (b * (f - shift) + c) / v


# -- pseudo-data assembly ------------------------------------------------------

@dataclass
class PseudoData:
    """Stacked pseudo-observation system consumed by the collapsed bound.

    Rows are ordered uncensored (function 1 then 2), between-limit (1, 2),
    below-detection (1, 2); within each block function-major, site-major,
    time-ascending.  ``rows`` holds the (function, site, time) design row per
    pseudo-observation, ``y`` the pseudo-data value (raw value or linear
    bound coefficient) and ``var`` the diagonal of the noise covariance.
    """

    rows: list
    y: np.ndarray
    var: np.ndarray
    b: np.ndarray
    c: np.ndarray
    shift: np.ndarray
    var_cens: np.ndarray
    n_obs: np.ndarray          # uncensored row counts per function (2,)
    n_uncensored: int

    def censored_constant(self) -> float:
        """Constant the bound picks up from completing the censored squares."""
        if self.b.size == 0:
            return 0.0
        return float(np.sum((0.5 * self.b**2 + self.c - self.b * self.shift) / self.var_cens))


@dataclass
class PseudoLayout:
    """Static pseudo-data structure of one dataset, reusable across evaluations.

    Row order and block membership never change during a fit; only the
    pseudo values (noise variances, bound coefficients) do.
    """

    rows: list
    a_obs: np.ndarray          # function index (0-based) per uncensored row
    y_obs: np.ndarray
    n_obs: np.ndarray
    cens_a: np.ndarray         # function index (0-based) per censored row
    cens_between: np.ndarray   # True for between-limit rows
    cens_keys: list

    @classmethod
    def from_observations(cls, observations) -> "PseudoLayout":
        obs = [o for o in observations if o.status is not Status.MISSING]
        by_status = {
            Status.OBSERVED: [],
            Status.BETWEEN_LIMITS: [],
            Status.BELOW_DETECTION: [],
        }
        for o in obs:
            by_status[o.status].append(o)
        for k in by_status:
            ordered = canonical_order([(o.function, o.site, o.time) for o in by_status[k]])
            lookup = {obs_key(o): o for o in by_status[k]}
            by_status[k] = [lookup[tuple(r)] for r in ordered]
        observed = by_status[Status.OBSERVED]
        censored = by_status[Status.BETWEEN_LIMITS] + by_status[Status.BELOW_DETECTION]
        n_obs = np.zeros(2, dtype=int)
        for o in observed:
            n_obs[o.function - 1] += 1
        return cls(
            rows=[(o.function, o.site, o.time) for o in observed + censored],
            a_obs=np.array([o.function - 1 for o in observed], dtype=int),
            y_obs=np.array([o.value for o in observed], dtype=float),
            n_obs=n_obs,
            cens_a=np.array([o.function - 1 for o in censored], dtype=int),
            cens_between=np.array([o.status is Status.BETWEEN_LIMITS for o in censored]),
            cens_keys=[obs_key(o) for o in censored],
        )

    def assemble(self, limits: CensoringLimits | None, sigmas, sd_qd, sd_d,
                 zeta: np.ndarray) -> PseudoData:
        sigmas = np.asarray(sigmas, dtype=float)
        if np.any(sigmas <= 0.0):
            raise LikelihoodError("noise sds must be positive")
        nc = self.cens_a.size
        if zeta is None:
            zeta = np.zeros(0)
        if np.asarray(zeta).size != nc:
            raise LikelihoodError("tangency vector does not match the censored rows")
        var_obs = sigmas[self.a_obs] ** 2
        if nc == 0:
            return PseudoData(rows=self.rows, y=self.y_obs.copy(), var=var_obs,
                              b=np.zeros(0), c=np.zeros(0), shift=np.zeros(0),
                              var_cens=np.zeros(0), n_obs=self.n_obs,
                              n_uncensored=self.y_obs.size)
        zeta = np.asarray(zeta, dtype=float)
        het = np.where(self.cens_between, np.asarray(sd_qd)[self.cens_a],
                       np.asarray(sd_d)[self.cens_a])
        v = sigmas[self.cens_a] ** 2 + het**2
        lq = limits.lq[self.cens_a]
        ld = limits.ld[self.cens_a]
        sd_tot = np.sqrt(v)
        val = np.where(self.cens_between, _log_between(zeta, ld, lq, sd_tot),
                       _log_below(zeta, ld, sd_tot))
        slope = np.where(self.cens_between, _dlog_between(zeta, ld, lq, sd_tot),
                         _dlog_below(zeta, ld, sd_tot))
        shift = np.where(self.cens_between, lq + ld, 2.0 * ld)
        b = zeta + v * slope
        c = v * val + 0.5 * zeta**2 - b * zeta + b * shift
        return PseudoData(
            rows=self.rows,
            y=np.concatenate([self.y_obs, b]),
            var=np.concatenate([var_obs, v]),
            b=b, c=c, shift=shift, var_cens=v,
            n_obs=self.n_obs, n_uncensored=self.y_obs.size,
        )


def assemble_pseudo_data(observations, limits: CensoringLimits, state: LocalBoundState,
                         sigmas) -> PseudoData:
    """Stack observations and bound coefficients into the pseudo-data system."""
    layout = PseudoLayout.from_observations(observations)
    missing = [k for k in layout.cens_keys if k not in state.zeta]
    if missing:
        raise LikelihoodError(f"no tangency point for censored row {missing[0]}")
    zeta = np.array([state.zeta[k] for k in layout.cens_keys])
    return layout.assemble(limits, sigmas, state.sd_qd, state.sd_d, zeta)
