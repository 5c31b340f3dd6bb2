"""Moving-average covariance functions on the branching network.

Latent functions use an exponential spatial smoothing kernel
``g(x) = (nu_s / l_s^2) exp(-x / (2 l_s^2))`` truncated to ``x >= 0`` and an
exponentiated-quadratic temporal kernel ``G(t) = (nu_t / l_t) exp(-t^2 /
(2 l_t^2))``.  Inducing functions use the same families with primed
parameters.  Covariances factor into a spatial component along the stream
and a stationary temporal component.

The spatial component between two function values is the overlap integral of
their kernels run upstream from their sites.  When both sites sit on the
downstream segment, both kernels split at the junction and the overlap picks
up a branch-weight correction; when the pair straddles the junction only the
downstream kernel splits, contributing a single branch weight.  Pairs on
distinct upstream segments never overlap (not flow-connected) and have zero
covariance at every time lag.

Site identifiers are fixed: sampled sites ``s1, s2, s3`` with junction
offsets ``tau_j**2`` and inducing sites ``s1p, s2p, s3p`` with offsets
``hprime_j``.  ``s1p`` lies above ``s1`` (between it and the junction);
``s2p``/``s3p`` lie below ``s2``/``s3``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

SQRT_2PI = float(np.sqrt(2.0 * np.pi))

SAMPLED_SITES = ("s1", "s2", "s3")
INDUCING_SITES = ("s1p", "s2p", "s3p")

# site id -> (segment, tau index or hprime index)
_SITE_SEGMENT = {"s1": 1, "s2": 2, "s3": 3, "s1p": 1, "s2p": 2, "s3p": 3}
_SITE_INDEX = {"s1": 0, "s2": 1, "s3": 2, "s1p": 0, "s2p": 1, "s3p": 2}


class KernelError(Exception):
    pass


@dataclass(frozen=True)
class MovingAverageParams:
    """Spatial and temporal moving-average parameters for one function."""

    nu_s: float
    l_s: float
    nu_t: float
    l_t: float

    def validate(self) -> None:
        vals = (self.nu_s, self.l_s, self.nu_t, self.l_t)
        if not all(np.isfinite(v) and v > 0.0 for v in vals):
            raise KernelError(f"moving-average parameters must be positive finite, got {vals}")


@dataclass(frozen=True)
class KernelConfig:
    """Kernel parameters for both latent functions and both inducing functions.

    ``independent=True`` zeroes every cross-function covariance, turning the
    joint model into two single-output models.
    """

    latent: tuple
    inducing: tuple
    independent: bool = False

    def validate(self) -> None:
        for p in (*self.latent, *self.inducing):
            p.validate()

    @staticmethod
    def expand_xi(xi: float, l_s: float, l_t: float) -> MovingAverageParams:
        """Expand the amplitude product ``xi = nu_t * nu_s``.

        Only the product enters any covariance, so the split is a convention:
        the temporal amplitude is pinned to one and the spatial amplitude
        carries ``xi``.
        """
        return MovingAverageParams(nu_s=xi, l_s=l_s, nu_t=1.0, l_t=l_t)

    def params(self, kind: str, idx: int) -> MovingAverageParams:
        group = self.latent if kind == "f" else self.inducing
        return group[idx - 1]


@dataclass
class LatentInputs:
    """Network inputs at which kernels are evaluated.

    ``tau`` (..., 3) and ``gamma`` (..., 2) may carry leading sample axes;
    ``hprime`` (3,) and ``alpha`` (2,) are deterministic.  Junction offsets
    of sampled sites are ``tau**2``; branch weights are ``ndtr(gamma)`` for
    latent kernels and ``ndtr(alpha)`` for inducing kernels.
    """

    tau: np.ndarray
    gamma: np.ndarray
    hprime: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=float)
        self.gamma = np.asarray(self.gamma, dtype=float)
        self.hprime = np.asarray(self.hprime, dtype=float)
        self.alpha = np.asarray(self.alpha, dtype=float)

    def offset(self, site: str):
        i = _SITE_INDEX[site]
        if site in SAMPLED_SITES:
            return self.tau[..., i] ** 2
        return self.hprime[i]

    def branch_weight(self, kind: str, segment: int):
        """Square-root weight picked up when a ``kind`` kernel enters ``segment``."""
        j = segment - 2
        if kind == "f":
            return ndtr(self.gamma[..., j])
        return ndtr(self.alpha[j])


def _check_site(site: str, kind: str) -> None:
    expected = SAMPLED_SITES if kind == "f" else INDUCING_SITES
    if site not in expected:
        raise KernelError(f"site {site!r} is not a registered {kind!r} site")


def temporal_cov(kind_a: str, a: int, kind_b: str, b: int, t_p, t_q, cfg: KernelConfig):
    """Stationary temporal covariance component between two function kinds."""
    pa, pb = cfg.params(kind_a, a), cfg.params(kind_b, b)
    if min(pa.l_t, pb.l_t) <= 0.0:
        raise KernelError("temporal lengthscales must be positive")
    ssq = pa.l_t**2 + pb.l_t**2
    lag = np.asarray(t_p, dtype=float) - np.asarray(t_q, dtype=float)
    return SQRT_2PI * pa.nu_t * pb.nu_t / np.sqrt(ssq) * np.exp(-(lag**2) / (2.0 * ssq))


def spatial_cov_unweighted(params_down: MovingAverageParams, params_up: MovingAverageParams, d):
    """Overlap integral of two exponential kernels a stream distance ``d`` apart.

    The downstream function's kernel carries the ``+d`` shift, so its
    lengthscale sets the decay rate.
    """
    d = np.asarray(d, dtype=float)
    if np.any(d < 0.0):
        raise KernelError("stream distance must be nonnegative")
    return _spatial_base(params_down, params_up, d)


def _spatial_base(pd: MovingAverageParams, pu: MovingAverageParams, gap):
    """Unweighted overlap with a signed gap (analytic in the gap)."""
    ssq = pd.l_s**2 + pu.l_s**2
    return 2.0 * pd.nu_s * pu.nu_s / ssq * np.exp(-np.asarray(gap, dtype=float) / (2.0 * pd.l_s**2))


def spatial_cov(kind_a: str, a: int, site_a: str, kind_b: str, b: int, site_b: str,
                cfg: KernelConfig, inputs: LatentInputs):
    """Spatial covariance component between two function values on the network.

    Broadcasts over any leading sample axes of ``inputs.tau`` / ``inputs.gamma``.
    The downstream/upstream roles are fixed by the site registry (inducing
    sites keep their rule-based placement even if a sampled offset crosses
    them), so the expression stays analytic in the uncertain offsets.
    """
    _check_site(site_a, kind_a)
    _check_site(site_b, kind_b)
    pa, pb = cfg.params(kind_a, a), cfg.params(kind_b, b)
    pa.validate()
    pb.validate()
    shape = np.broadcast_shapes(inputs.tau.shape[:-1], inputs.gamma.shape[:-1])
    if cfg.independent and a != b:
        return np.zeros(shape)
    seg_a, seg_b = _SITE_SEGMENT[site_a], _SITE_SEGMENT[site_b]
    if seg_a != seg_b and 1 not in (seg_a, seg_b):
        return np.zeros(shape)  # distinct upstream branches: not flow-connected

    off_a, off_b = inputs.offset(site_a), inputs.offset(site_b)
    if seg_a == seg_b == 1:
        # Both below the junction: the site with the larger junction offset is
        # downstream.  Within the canonical layout s1p sits above s1.
        if _is_downstream_on_seg1(site_a, site_b):
            down, up = (kind_a, pa, off_a, site_a), (kind_b, pb, off_b, site_b)
        else:
            down, up = (kind_b, pb, off_b, site_b), (kind_a, pa, off_a, site_a)
        gap = down[2] - up[2]
        base = _spatial_base(down[1], up[1], gap)
        # Both kernels cross the junction: weight the beyond-junction overlap
        # by the summed branch-weight products.
        kappa = (down[1].l_s**2 + up[1].l_s**2) / (2.0 * down[1].l_s**2 * up[1].l_s**2)
        w = sum(inputs.branch_weight(down[0], k) * inputs.branch_weight(up[0], k) for k in (2, 3))
        split = np.exp(-np.asarray(up[2]) * kappa)
        return _shape_out(base * (1.0 - (1.0 - w) * split), shape)
    if seg_a == seg_b:
        # Same upstream branch, no junction above: plain overlap.
        if _is_downstream_on_branch(site_a, site_b):
            gap = off_b - off_a
            base = _spatial_base(pa, pb, gap)
        else:
            gap = off_a - off_b
            base = _spatial_base(pb, pa, gap)
        return _shape_out(base, shape)
    # Pair straddles the junction: the downstream kernel enters the upstream
    # site's branch and picks up that branch's weight.
    if seg_a == 1:
        down, up = (kind_a, pa, off_a), (kind_b, pb, off_b, seg_b)
    else:
        down, up = (kind_b, pb, off_b), (kind_a, pa, off_a, seg_a)
    dist = down[2] + up[2]
    base = _spatial_base(down[1], up[1], dist)
    w = inputs.branch_weight(down[0], up[3])
    return _shape_out(base * w, shape)


def _shape_out(val, shape):
    val = np.asarray(val, dtype=float)
    if val.shape == shape:
        return val
    return np.broadcast_to(val, shape).copy()


def _is_downstream_on_seg1(site_a: str, site_b: str) -> bool:
    """True when ``site_a`` is the downstream member of a segment-1 pair."""
    rank = {"s1": 0, "s1p": 1}  # s1p lies above s1 by construction
    return rank[site_a] <= rank[site_b]


def _is_downstream_on_branch(site_a: str, site_b: str) -> bool:
    """True when ``site_a`` is the downstream member on segment 2 or 3."""
    # s2p/s3p sit below their sampled sites by construction.
    return site_a.endswith("p") or site_a == site_b


def st_cov_ff(a: int, b: int, site_a: str, site_b: str, t_p, t_q,
              cfg: KernelConfig, inputs: LatentInputs):
    """Separable spatio-temporal covariance between two latent-function values."""
    sp = spatial_cov("f", a, site_a, "f", b, site_b, cfg, inputs)
    return sp * temporal_cov("f", a, "f", b, t_p, t_q, cfg)


def st_cov_uu(a: int, b: int, site_a: str, site_b: str, t_p, t_q,
              cfg: KernelConfig, inputs: LatentInputs):
    """Separable spatio-temporal covariance between two inducing-function values."""
    sp = spatial_cov("u", a, site_a, "u", b, site_b, cfg, inputs)
    return sp * temporal_cov("u", a, "u", b, t_p, t_q, cfg)


def st_cov_uf(a: int, b: int, site_u: str, site_f: str, t_u, t_f,
              cfg: KernelConfig, inputs: LatentInputs):
    """Separable spatio-temporal cross-covariance of inducing vs latent values."""
    sp = spatial_cov("u", a, site_u, "f", b, site_f, cfg, inputs)
    return sp * temporal_cov("u", a, "f", b, t_u, t_f, cfg)


def build_gram(kind: str, rows, cfg: KernelConfig, inputs: LatentInputs, cols=None) -> np.ndarray:
    """Assemble a covariance matrix from design rows ``(function, site, time)``.

    ``kind`` is one of ``"ff"``, ``"uu"`` (square, symmetric) or ``"uf"``
    (rectangular, ``rows`` are latent data rows and ``cols`` inducing rows).
    Deterministic inputs only.  Assembly is blocked by (function, site) so
    the temporal factor is vectorised.
    """
    if inputs.tau.ndim != 1:
        raise KernelError("build_gram requires deterministic (unsampled) inputs")
    if kind in ("ff", "uu"):
        k = "f" if kind == "ff" else "u"
        if cols is not None:
            return _gram_blocks(k, rows, k, cols, cfg, inputs)
        mat = _gram_blocks(k, rows, k, rows, cfg, inputs)
        asym = float(np.max(np.abs(mat - mat.T))) if mat.size else 0.0
        if asym > 1e-12 * max(1.0, float(np.max(np.abs(mat))) if mat.size else 1.0):
            raise KernelError(f"gram symmetry violated by {asym:g}")
        return 0.5 * (mat + mat.T)
    if kind == "uf":
        if cols is None:
            raise KernelError("uf gram needs both data rows and inducing cols")
        return _gram_blocks("f", rows, "u", cols, cfg, inputs)
    raise KernelError(f"unknown gram kind {kind!r}")


def _gram_blocks(kind_r, rows, kind_c, cols, cfg, inputs) -> np.ndarray:
    rows = list(rows)
    cols = list(cols)
    out = np.zeros((len(rows), len(cols)))
    rgroups = _group_rows(rows)
    cgroups = _group_rows(cols)
    for (fa, sa), ridx in rgroups.items():
        t_r = np.array([rows[i][2] for i in ridx])
        for (fb, sb), cidx in cgroups.items():
            sp = spatial_cov(kind_r, fa, sa, kind_c, fb, sb, cfg, inputs)
            if np.all(sp == 0.0):
                continue
            t_c = np.array([cols[j][2] for j in cidx])
            tmat = temporal_cov(kind_r, fa, kind_c, fb, t_r[:, None], t_c[None, :], cfg)
            out[np.ix_(ridx, cidx)] = float(sp) * tmat
    return out


def _group_rows(rows):
    groups: dict = {}
    for i, (f, site, _t) in enumerate(rows):
        groups.setdefault((f, site), []).append(i)
    return groups


def canonical_order(rows):
    """Sort design rows function-major, then site (s1, s2, s3), then time."""
    site_rank = {s: i for i, s in enumerate(SAMPLED_SITES)}
    site_rank.update({s: i for i, s in enumerate(INDUCING_SITES)})
    return sorted(rows, key=lambda r: (r[0], site_rank[r[1]], r[2]))
