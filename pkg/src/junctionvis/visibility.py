"""Road-visible percentage at intersections.

Two measures are computed per intersection: the full-circle angular
occlusion at the node itself, and the mean over sector views (a fan of
rays) sampled along each approach toward the node.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .geometry import (
    TWO_PI,
    EnclosedViewpoint,
    GeoPoint,
    angular_extent,
    bearing_of,
    interpolate_with_segments,
    merge_intervals,
    meters_to_deg,
    point_in_polygon,
    polyline_length,
    ray_distances,
    truncate_polyline,
)
from .index import ObstacleIndex
from .ingest import RoadSegment
from .network import IntersectionNode


@dataclass(frozen=True)
class VisibilityConfig:
    fov: float = 80.0
    ray_step: float = 1.0
    max_range_m: float = 100.0
    interp_spacing_m: float = 10.0
    sample_extent_m: float = 50.0
    aggregate: str = "mean"
    method: str = "sector"
    workers: int = 1

    def __post_init__(self):
        if not (self.fov > 0 and self.ray_step > 0 and self.max_range_m > 0):
            raise ValueError("fov, ray_step and max_range_m must be positive")
        if not (self.interp_spacing_m > 0 and self.sample_extent_m >= 0):
            raise ValueError("interpolation spacing must be positive")
        n = self.fov / self.ray_step
        if abs(n - round(n)) > 1e-9:
            raise ValueError("fov must be a whole multiple of ray_step")
        if self.aggregate not in ("mean", "min"):
            raise ValueError("aggregate must be 'mean' or 'min'")
        if self.method not in ("sector", "full_circle"):
            raise ValueError("method must be 'sector' or 'full_circle'")

    @property
    def ray_count(self) -> int:
        return int(round(self.fov / self.ray_step)) + 1

    @property
    def max_range(self) -> float:
        return meters_to_deg(self.max_range_m)

    def ray_offsets(self) -> np.ndarray:
        """Ray directions relative to the heading, in radians."""
        k = np.arange(self.ray_count) - (self.ray_count - 1) / 2.0
        return np.radians(k * self.ray_step)


@dataclass(frozen=True)
class ViewSample:
    point: GeoPoint
    heading: float
    view_percentage: float
    view_polygon: tuple[tuple[float, float], ...]

    def to_dict(self) -> dict:
        return {"point": list(self.point), "heading": self.heading,
                "view_percentage": self.view_percentage,
                "view_polygon": [list(p) for p in self.view_polygon]}

    @classmethod
    def from_dict(cls, d: dict) -> "ViewSample":
        return cls(GeoPoint(*d["point"]), d["heading"], d["view_percentage"],
                   tuple(tuple(p) for p in d["view_polygon"]))


@dataclass(frozen=True)
class IntersectionVisibility:
    node_id: int
    location: GeoPoint
    full_circle_percentage: float
    sector_mean_percentage: float
    sector_min_percentage: float
    samples: tuple[ViewSample, ...] = field(default=())

    def value(self, config: VisibilityConfig) -> float:
        """The covariate fed to the regression under ``config``."""
        if config.method == "full_circle":
            return self.full_circle_percentage
        return self.sector_mean_percentage if config.aggregate == "mean" else self.sector_min_percentage

    def to_dict(self) -> dict:
        return {
            "node_id": self.node_id,
            "location": list(self.location),
            "full_circle_percentage": self.full_circle_percentage,
            "sector_mean_percentage": self.sector_mean_percentage,
            "sector_min_percentage": self.sector_min_percentage,
            "samples": [s.to_dict() for s in self.samples],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IntersectionVisibility":
        return cls(d["node_id"], GeoPoint(*d["location"]), d["full_circle_percentage"],
                   d["sector_mean_percentage"], d["sector_min_percentage"],
                   tuple(ViewSample.from_dict(s) for s in d["samples"]))


def view_percentage_full_circle(location: Sequence[float], index: ObstacleIndex, max_range: float) -> float:
    """1 minus the blocked share of the full circle around ``location``.

    Buildings with any part within ``max_range`` contribute their whole
    angular extent; overlapping shadows are counted once.
    """
    arcs = []
    for i in index.near(location, max_range):
        try:
            arcs.extend(angular_extent(location, index.rings[i]))
        except EnclosedViewpoint:
            return 0.0
    _, blocked = merge_intervals(arcs)
    return min(max(1.0 - blocked / TWO_PI, 0.0), 1.0)


def sector_view_sample(
    point: Sequence[float],
    heading: float,
    index: ObstacleIndex,
    config: VisibilityConfig,
) -> ViewSample:
    """Fan of rays around ``heading``; percentage is clipped over unclipped fan area."""
    origin = (float(point[0]), float(point[1]))
    rng = config.max_range
    cand = index.near(origin, rng)
    if any(point_in_polygon(origin, index.rings[i]) for i in cand):
        return ViewSample(GeoPoint(*origin), heading, 0.0, (origin,))

    bearings = heading + config.ray_offsets()
    dist, _ = ray_distances(origin, bearings, index.edges_of(cand), rng)
    full = np.full_like(dist, rng)
    # fan of triangles: each has area d_k * d_{k+1} * sin(step) / 2, the sine cancels
    frac = float(np.sum(dist[:-1] * dist[1:]) / np.sum(full[:-1] * full[1:]))
    ends = np.column_stack([origin[0] + dist * np.cos(bearings), origin[1] + dist * np.sin(bearings)])
    poly = (origin,) + tuple((float(x), float(y)) for x, y in ends)
    return ViewSample(GeoPoint(*origin), float(heading), min(max(frac, 0.0), 1.0), poly)


def _arm_polylines(node: IntersectionNode, segments: Mapping[int, RoadSegment]) -> list[list[tuple[float, float]]]:
    """Polylines starting at the node and running outward along each incident way."""
    arms = []
    members = set(node.merged_from) or {node.node_id}
    for wid in node.incident_segments:
        seg = segments.get(wid)
        if seg is None:
            continue
        for nid in sorted(members):
            if nid not in seg.node_ids:
                continue
            pos = seg.node_ids.index(nid)
            geom = list(seg.geometry)
            back = geom[pos::-1]
            fwd = geom[pos:]
            for arm in (back, fwd):
                if len(arm) >= 2:
                    arms.append(arm)
    return arms


def arm_viewpoints(arm: Sequence[Sequence[float]], config: VisibilityConfig) -> list[tuple[GeoPoint, float]]:
    """Sample points on an arm with headings pointing back toward its start."""
    part = truncate_polyline(arm, meters_to_deg(config.sample_extent_m))
    if len(part) < 2 or polyline_length(part) == 0:
        return []
    return [
        (p, bearing_of(part[j + 1], part[j]))
        for p, j in interpolate_with_segments(part, meters_to_deg(config.interp_spacing_m))
    ]


def intersection_visibility(
    node: IntersectionNode,
    segments: Mapping[int, RoadSegment],
    index: ObstacleIndex,
    config: VisibilityConfig = VisibilityConfig(),
) -> IntersectionVisibility:
    samples = []
    for arm in _arm_polylines(node, segments):
        for pt, heading in arm_viewpoints(arm, config):
            samples.append(sector_view_sample(pt, heading, index, config))
    full = view_percentage_full_circle(node.location, index, config.max_range)
    if samples:
        vals = [s.view_percentage for s in samples]
        mean = math.fsum(vals) / len(vals)
        low = min(vals)
    else:
        mean = low = full
    return IntersectionVisibility(node.node_id, node.location, full, mean, low, tuple(samples))


def _visibility_chunk(args):
    nodes, segments, rings, config = args
    index = ObstacleIndex(rings)
    return [intersection_visibility(n, segments, index, config) for n in nodes]


def compute_visibility(
    nodes: Sequence[IntersectionNode],
    segments: Sequence[RoadSegment],
    rings,
    config: VisibilityConfig = VisibilityConfig(),
) -> list[IntersectionVisibility]:
    """Visibility for every node, sorted by node id.

    With ``config.workers > 1`` nodes are split over a process pool; every
    per-node computation is independent, so output matches a serial run.
    """
    seg_map = {s.way_id: s for s in segments}
    ordered = sorted(nodes, key=lambda n: n.node_id)
    rings = list(rings)
    if config.workers <= 1 or len(ordered) < 2:
        return _visibility_chunk((ordered, seg_map, rings, config))
    chunks = [ordered[i::config.workers] for i in range(config.workers)]
    with ProcessPoolExecutor(max_workers=config.workers) as pool:
        parts = pool.map(_visibility_chunk, [(c, seg_map, rings, config) for c in chunks if c])
    results = [r for part in parts for r in part]
    return sorted(results, key=lambda v: v.node_id)


def _closed(coords: Sequence[Sequence[float]]) -> list[list[float]]:
    ring = [list(p) for p in coords]
    while len(ring) < 3:
        ring.append(list(ring[-1]))
    ring.append(list(ring[0]))
    return ring


def visibility_geojson(results: Sequence[IntersectionVisibility]) -> dict:
    """FeatureCollection: one Polygon per view sample, one Point per intersection."""
    features = []
    for res in results:
        for s in res.samples:
            features.append({
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [_closed(s.view_polygon)]},
                "properties": {"node_id": res.node_id, "view_percentage": s.view_percentage},
            })
        features.append({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": list(res.location)},
            "properties": {
                "node_id": res.node_id,
                "full_circle_percentage": res.full_circle_percentage,
                "sector_mean_percentage": res.sector_mean_percentage,
            },
        })
    return {"type": "FeatureCollection", "features": features}
