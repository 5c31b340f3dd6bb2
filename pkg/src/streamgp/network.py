"""Stream-network topology: three segments joined at a single junction.

Segment 1 is the unique downstream segment; segments 2 and 3 branch off at
the junction and extend upstream without bound.  Site coordinates are
upstream distances from the outlet, derived from the per-edge distances that
are the source of truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

DOWNSTREAM_SEGMENT = 1
UPSTREAM_SEGMENTS = (2, 3)
SEGMENTS = (1, 2, 3)

# Spatial inducing sites shadow the sampled sites: the one on segment 1 sits
# above its sampled site, the ones on segments 2/3 sit below theirs.  None
# may cross the junction.
INDUCING_SITE_RULES = {
    "s1p": (1, "above"),
    "s2p": (2, "below"),
    "s3p": (3, "below"),
}


class NetworkError(Exception):
    """Raised for unknown sites or invalid topology queries."""


@dataclass(frozen=True)
class Site:
    segment: int
    coord: float  # upstream distance from the outlet


@dataclass(frozen=True)
class SegmentSets:
    """Downstream / upstream / between index sets for one site or pair."""

    downstream: frozenset
    upstream: frozenset
    between: frozenset = frozenset()


@dataclass
class StreamNetwork:
    """Fixed branching topology with a site registry.

    ``junction`` is the coordinate of the single confluence (the top of
    segment 1).  Sites on segment 1 must lie strictly below it, sites on
    segments 2/3 strictly above.  The upstream ends of segments 2 and 3 are
    unbounded.
    """

    junction: float
    sites: dict = field(default_factory=dict)

    @classmethod
    def from_edge_distances(cls, h1: float, h2: float, h3: float) -> "StreamNetwork":
        """Build the canonical three-site network from edge distances.

        ``h1`` is the distance from sampled site s1 up to the junction; ``h2``
        and ``h3`` are the distances from the junction up to s2 and s3.
        """
        if min(h1, h2, h3) <= 0.0:
            raise NetworkError("edge distances must be strictly positive")
        net = cls(junction=h1)
        net.add_site("s1", 1, 0.0)
        net.add_site("s2", 2, h1 + h2)
        net.add_site("s3", 3, h1 + h3)
        return net

    def add_site(self, site_id: str, segment: int, coord: float) -> None:
        if segment not in SEGMENTS:
            raise NetworkError(f"unknown segment {segment!r}")
        if coord < 0.0:
            raise NetworkError("site coordinates must be nonnegative")
        if segment == DOWNSTREAM_SEGMENT and coord >= self.junction:
            raise NetworkError("sites on segment 1 must lie strictly below the junction")
        if segment in UPSTREAM_SEGMENTS and coord <= self.junction:
            raise NetworkError("sites on segments 2/3 must lie strictly above the junction")
        self.sites[site_id] = Site(segment, coord)

    def _site(self, site_id: str) -> Site:
        try:
            return self.sites[site_id]
        except KeyError:
            raise NetworkError(f"unknown site {site_id!r}") from None

    # -- connectivity sets -------------------------------------------------

    def downstream_set(self, site_id: str) -> frozenset:
        seg = self._site(site_id).segment
        return frozenset({1}) if seg == 1 else frozenset({1, seg})

    def upstream_set(self, site_id: str) -> frozenset:
        seg = self._site(site_id).segment
        return frozenset({1, 2, 3}) if seg == 1 else frozenset({seg})

    def segment_sets(self, site_id: str) -> SegmentSets:
        return SegmentSets(self.downstream_set(site_id), self.upstream_set(site_id))

    def flow_connected(self, a: str, b: str) -> bool:
        da, db = self.downstream_set(a), self.downstream_set(b)
        inter = da & db
        return inter == da or inter == db

    def order_pair(self, a: str, b: str):
        """Return (downstream_id, upstream_id) for a flow-connected pair.

        For coincident coordinates the first argument is treated as
        downstream; the distinction is immaterial at zero distance.
        """
        if not self.flow_connected(a, b):
            raise NetworkError(f"sites {a!r} and {b!r} are not flow-connected")
        if self._site(a).coord <= self._site(b).coord:
            return a, b
        return b, a

    def between_set(self, upstream: str, downstream: str) -> frozenset:
        """Segments strictly gained moving up from ``downstream`` to ``upstream``.

        Includes the upstream site's segment, excludes the downstream one;
        empty when both sites share a segment.
        """
        down, up = self.order_pair(downstream, upstream)
        if (down, up) != (downstream, upstream):
            raise NetworkError(f"{upstream!r} is not upstream of {downstream!r}")
        seg_d = self._site(downstream).segment
        seg_u = self._site(upstream).segment
        if seg_d == seg_u:
            return frozenset()
        return frozenset({seg_u})

    # -- distances and weights ---------------------------------------------

    def hydro_distance(self, a: str, b: str) -> float:
        """Distance along the stream between two sites.

        Flow-connected pairs use the coordinate difference; otherwise the
        two distances down to the common junction are summed.
        """
        sa, sb = self._site(a), self._site(b)
        if self.flow_connected(a, b):
            return abs(sa.coord - sb.coord)
        return (sa.coord - self.junction) + (sb.coord - self.junction)

    def weight_product(self, a: str, b: str, sqrt_weights: dict) -> float:
        """Product of per-segment square-root weights along the between-set.

        The product over an empty between-set is one.  Only defined for
        flow-connected pairs.
        """
        down, up = self.order_pair(a, b)
        out = 1.0
        for seg in self.between_set(up, down):
            try:
                out *= sqrt_weights[seg]
            except KeyError:
                raise NetworkError(f"missing weight for segment {seg}") from None
        return out

    # -- junction bookkeeping for kernel evaluation -------------------------

    def junction_offset(self, site_id: str) -> float:
        """Absolute distance from the site to the junction."""
        s = self._site(site_id)
        if s.segment == DOWNSTREAM_SEGMENT:
            return self.junction - s.coord
        return s.coord - self.junction

    def segment_of(self, site_id: str) -> int:
        return self._site(site_id).segment
