"""Planar geometry kernel in raw degree coordinates.

All distances are Euclidean in (lon, lat) degree space. Parameters given in
meters are converted with a single fixed factor, ``DEG_PER_METER``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi

DEG_PER_METER = 0.000133
ROAD_WIDTH_M = 14.8
ROAD_WIDTH_DEG = ROAD_WIDTH_M * DEG_PER_METER
ACCIDENT_RADIUS_DEG = 0.0003

# Absolute tolerance (degree units) for on-boundary and degeneracy tests.
EPS = 1e-12


class GeometryError(ValueError):
    """Invalid or degenerate geometric input."""


class EnclosedViewpoint(GeometryError):
    """The viewpoint lies inside or on the boundary of an obstacle."""


def meters_to_deg(meters: float) -> float:
    return meters * DEG_PER_METER


class GeoPoint(NamedTuple):
    lon: float
    lat: float

    def validated(self) -> "GeoPoint":
        if not (math.isfinite(self.lon) and math.isfinite(self.lat)):
            raise GeometryError(f"non-finite coordinate {self!r}")
        if not (-180.0 <= self.lon <= 180.0 and -90.0 <= self.lat <= 90.0):
            raise GeometryError(f"coordinate out of range {self!r}")
        return self


def _segments_cross(p1, p2, q1, q2) -> bool:
    """Proper or touching intersection of two closed segments."""

    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if abs(v) <= EPS * EPS:
            return 0
        return 1 if v > 0 else -1

    def on_seg(a, b, c):
        return (min(a[0], b[0]) - EPS <= c[0] <= max(a[0], b[0]) + EPS
                and min(a[1], b[1]) - EPS <= c[1] <= max(a[1], b[1]) + EPS)

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and on_seg(p1, p2, q1):
        return True
    if o2 == 0 and on_seg(p1, p2, q2):
        return True
    if o3 == 0 and on_seg(q1, q2, p1):
        return True
    if o4 == 0 and on_seg(q1, q2, p2):
        return True
    return False


def shoelace_area(coords: np.ndarray) -> float:
    """Signed area of an open ring given as an (n, 2) array."""
    x, y = coords[:, 0], coords[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


@dataclass(frozen=True, eq=True)
class PolygonRing:
    """Simple polygon stored as an open ring (closing vertex not repeated).

    Construct through :meth:`from_points`, which validates the ring.
    """

    vertices: tuple[tuple[float, float], ...]

    @classmethod
    def from_points(cls, points: Iterable[Sequence[float]]) -> "PolygonRing":
        pts = [(float(p[0]), float(p[1])) for p in points]
        if len(pts) > 1 and pts[0] == pts[-1]:
            pts = pts[:-1]
        # drop consecutive duplicates
        dedup = []
        for p in pts:
            if not dedup or p != dedup[-1]:
                dedup.append(p)
        if len(dedup) > 1 and dedup[0] == dedup[-1]:
            dedup.pop()
        if len(set(dedup)) < 3:
            raise GeometryError("polygon needs at least 3 distinct vertices")
        if not all(math.isfinite(c) for p in dedup for c in p):
            raise GeometryError("polygon has non-finite vertex")
        ring = cls(tuple(dedup))
        if abs(ring.signed_area) <= EPS * EPS:
            raise GeometryError("polygon has zero area")
        if ring._self_intersects():
            raise GeometryError("polygon is self-intersecting")
        return ring

    def _self_intersects(self) -> bool:
        v = self.vertices
        n = len(v)
        for i in range(n):
            a1, a2 = v[i], v[(i + 1) % n]
            for j in range(i + 1, n):
                # adjacent edges share a vertex by construction
                if j == i + 1 or (i == 0 and j == n - 1):
                    continue
                if _segments_cross(a1, a2, v[j], v[(j + 1) % n]):
                    return True
        return False

    @property
    def coords(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=float)

    @property
    def closed_coords(self) -> list[list[float]]:
        out = [list(p) for p in self.vertices]
        out.append(list(self.vertices[0]))
        return out

    @property
    def signed_area(self) -> float:
        return shoelace_area(self.coords)

    @property
    def area(self) -> float:
        return abs(self.signed_area)

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        c = self.coords
        return (float(c[:, 0].min()), float(c[:, 1].min()),
                float(c[:, 0].max()), float(c[:, 1].max()))

    def edges(self) -> np.ndarray:
        """Array of shape (n, 2, 2): start and end point of each edge."""
        c = self.coords
        return np.stack([c, np.roll(c, -1, axis=0)], axis=1)


def bearing_of(origin: Sequence[float], target: Sequence[float]) -> float:
    """Planar bearing of ``target - origin`` in [0, 2π), counterclockwise from +x."""
    dx = float(target[0]) - float(origin[0])
    dy = float(target[1]) - float(origin[1])
    if dx == 0.0 and dy == 0.0:
        raise GeometryError("degenerate bearing: coincident points")
    return normalize_angle(math.atan2(dy, dx))


def normalize_angle(theta: float) -> float:
    t = math.fmod(theta, TWO_PI)
    if t < 0.0:
        t += TWO_PI
    if t >= TWO_PI:
        t = 0.0
    return t


@dataclass(frozen=True)
class AngularInterval:
    """Counterclockwise arc from ``start`` to ``end``.

    ``start`` lies in [0, 2π) and ``end`` in (0, 2π]. The arc crosses bearing
    zero exactly when ``end < start``; the full circle is ``(0, 2π)``.
    """

    start: float
    end: float

    def __post_init__(self):
        if not (0.0 <= self.start < TWO_PI) or not (0.0 < self.end <= TWO_PI):
            raise GeometryError(f"interval bounds out of range: {self}")
        if self.end == self.start:
            raise GeometryError("zero-width interval")

    @classmethod
    def between(cls, start: float, end: float) -> "AngularInterval":
        """Normalize arbitrary angles into the canonical representation."""
        width = end - start
        if width >= TWO_PI:
            return cls(0.0, TWO_PI)
        s = normalize_angle(start)
        e = normalize_angle(end)
        if e == 0.0:
            e = TWO_PI
        return cls(s, e)

    @property
    def wraps(self) -> bool:
        return self.end < self.start

    @property
    def measure(self) -> float:
        if self.wraps:
            return TWO_PI - self.start + self.end
        return self.end - self.start

    def contains(self, theta: float) -> bool:
        t = normalize_angle(theta)
        if self.wraps:
            return t >= self.start or t <= self.end
        return self.start <= t <= self.end

    def linear_pieces(self) -> list[tuple[float, float]]:
        if self.wraps:
            return [(self.start, TWO_PI), (0.0, self.end)]
        return [(self.start, self.end)]


def merge_intervals(
    intervals: Iterable[AngularInterval],
) -> tuple[tuple[AngularInterval, ...], float]:
    """Union of arcs as a disjoint, sorted tuple plus its total measure."""
    pieces = sorted(p for iv in intervals for p in iv.linear_pieces())
    if not pieces:
        return (), 0.0
    merged: list[list[float]] = []
    for s, e in pieces:
        if merged and s <= merged[-1][1]:
            if e > merged[-1][1]:
                merged[-1][1] = e
        else:
            merged.append([s, e])

    if merged[0][0] <= 0.0 and merged[-1][1] >= TWO_PI and len(merged) > 1:
        head = merged.pop(0)
        tail = merged.pop()
        joined = AngularInterval(tail[0], head[1])
        out = [AngularInterval(s, e) for s, e in merged] + [joined]
    else:
        out = [AngularInterval(s, e) for s, e in merged]
    out.sort(key=lambda iv: iv.start)
    total = math.fsum(iv.measure for iv in out)
    return tuple(out), min(total, TWO_PI)


def _point_on_edges(p: np.ndarray, edges: np.ndarray, tol: float = EPS) -> bool:
    a = edges[:, 0, :]
    b = edges[:, 1, :]
    ab = b - a
    ap = p - a
    denom = np.einsum("ij,ij->i", ab, ab)
    t = np.clip(np.einsum("ij,ij->i", ap, ab) / denom, 0.0, 1.0)
    closest = a + t[:, None] * ab
    d = np.hypot(*(closest - p).T)
    return bool(np.any(d <= tol))


def point_in_polygon(point: Sequence[float], ring: PolygonRing, boundary: bool = True) -> bool:
    """Even-odd containment; points on the boundary count as inside when ``boundary``."""
    p = np.asarray(point, dtype=float)
    edges = ring.edges()
    if _point_on_edges(p, edges):
        return boundary
    x, y = p
    x1, y1 = edges[:, 0, 0], edges[:, 0, 1]
    x2, y2 = edges[:, 1, 0], edges[:, 1, 1]
    straddle = (y1 > y) != (y2 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xcross = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
    return bool(np.count_nonzero(straddle & (x < xcross)) % 2)


def distance_to_ring(point: Sequence[float], ring: PolygonRing) -> float:
    """Distance from a point to the ring boundary (0 when inside)."""
    p = np.asarray(point, dtype=float)
    if point_in_polygon(p, ring):
        return 0.0
    edges = ring.edges()
    a = edges[:, 0, :]
    ab = edges[:, 1, :] - a
    t = np.clip(np.einsum("ij,ij->i", p - a, ab) / np.einsum("ij,ij->i", ab, ab), 0.0, 1.0)
    d = np.hypot(*(a + t[:, None] * ab - p).T)
    return float(d.min())


def angular_extent(viewpoint: Sequence[float], obstacle: PolygonRing) -> tuple[AngularInterval, ...]:
    """Bearings from ``viewpoint`` at which a ray hits ``obstacle``.

    The shadow of a simple polygon seen from outside is the union of the arcs
    subtended by its edges, so concave outlines yield several intervals
    rather than their hull span.
    """
    p = np.asarray(viewpoint, dtype=float)
    if point_in_polygon(p, obstacle):
        raise EnclosedViewpoint("viewpoint inside or on obstacle boundary")
    rel = obstacle.coords - p
    bearings = np.mod(np.arctan2(rel[:, 1], rel[:, 0]), TWO_PI)
    bearings[bearings >= TWO_PI] = 0.0
    nxt = np.roll(np.arange(len(rel)), -1)
    arcs = []
    for i, j in enumerate(nxt):
        cross = rel[i, 0] * rel[j, 1] - rel[i, 1] * rel[j, 0]
        if cross == 0.0:
            # edge points straight at the viewpoint: zero angular width
            continue
        a, b = float(bearings[i]), float(bearings[j])
        if cross < 0:
            a, b = b, a
        # reuse vertex bearings verbatim so neighbouring edge arcs touch exactly
        if b == 0.0:
            b = TWO_PI
        if a == b:
            continue
        arcs.append(AngularInterval(a, b))
    merged, _ = merge_intervals(arcs)
    return merged


def ray_distances(
    origin: Sequence[float],
    bearings: np.ndarray,
    edges: np.ndarray,
    max_range: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Nearest edge crossing along each ray.

    Returns (distances, edge index or -1) with distances capped at ``max_range``.
    ``edges`` has shape (m, 2, 2).
    """
    bearings = np.atleast_1d(np.asarray(bearings, dtype=float))
    n = bearings.shape[0]
    if edges.shape[0] == 0:
        return np.full(n, float(max_range)), np.full(n, -1, dtype=int)
    o = np.asarray(origin, dtype=float)
    dx = np.cos(bearings)[:, None]
    dy = np.sin(bearings)[:, None]
    a = edges[:, 0, :] - o
    s = edges[:, 1, :] - edges[:, 0, :]
    ax, ay = a[:, 0][None, :], a[:, 1][None, :]
    sx, sy = s[:, 0][None, :], s[:, 1][None, :]
    # solve o + t*d = e0 + u*s
    denom = dx * sy - dy * sx
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (ax * sy - ay * sx) / denom
        u = (ax * dy - ay * dx) / denom
    valid = (denom != 0.0) & (t > 0.0) & (u >= 0.0) & (u <= 1.0)
    t = np.where(valid, t, np.inf)
    idx = np.argmin(t, axis=1)
    best = t[np.arange(n), idx]
    hit = best <= max_range
    dist = np.where(hit, best, float(max_range))
    return dist, np.where(hit, idx, -1)


def cast_ray(
    origin: Sequence[float],
    bearing: float,
    max_range: float,
    obstacles: Sequence[PolygonRing],
) -> tuple[float, int | None]:
    """Distance to the nearest obstacle boundary along one ray.

    Returns ``(max_range, None)`` on a miss and ``(0.0, i)`` when the origin
    lies inside obstacle ``i``.
    """
    if max_range <= 0:
        raise GeometryError("max_range must be positive")
    for i, ob in enumerate(obstacles):
        if point_in_polygon(origin, ob):
            return 0.0, i
    if not obstacles:
        return float(max_range), None
    edge_sets = [ob.edges() for ob in obstacles]
    owner = np.concatenate([np.full(len(e), i) for i, e in enumerate(edge_sets)])
    dist, idx = ray_distances(origin, np.array([bearing]), np.concatenate(edge_sets), max_range)
    if idx[0] < 0:
        return float(max_range), None
    return float(dist[0]), int(owner[idx[0]])


def polyline_length(points: Sequence[Sequence[float]]) -> float:
    c = np.asarray(points, dtype=float)
    return float(np.hypot(*np.diff(c, axis=0).T).sum())


def interpolate_along(polyline: Sequence[Sequence[float]], spacing: float) -> list[GeoPoint]:
    """Points every ``spacing`` of arc length, endpoints always included."""
    return [p for p, _ in interpolate_with_segments(polyline, spacing)]


def interpolate_with_segments(
    polyline: Sequence[Sequence[float]], spacing: float
) -> list[tuple[GeoPoint, int]]:
    """Like :func:`interpolate_along`, also giving the polyline edge each point lies on."""
    if len(polyline) < 2:
        raise GeometryError("polyline needs at least 2 vertices")
    if spacing <= 0:
        raise GeometryError("spacing must be positive")
    c = np.asarray(polyline, dtype=float)
    seg = np.hypot(*np.diff(c, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total <= 0:
        raise GeometryError("polyline has zero length")
    # relative slack keeps exact multiples (e.g. 0.001 / 0.0005) from being lost
    n_steps = int(math.floor(total / spacing * (1 + 1e-9)))
    offsets = [k * spacing for k in range(n_steps + 1) if k * spacing < total * (1 - 1e-9)]
    offsets.append(total)
    nonzero = np.flatnonzero(seg > 0)
    out = []
    for s in offsets:
        i = int(np.searchsorted(cum, s, side="right")) - 1
        i = min(max(i, 0), len(seg) - 1)
        if seg[i] == 0.0:
            later = nonzero[nonzero >= i]
            i = int(later[0]) if len(later) else int(nonzero[-1])
        f = min(max((s - cum[i]) / seg[i], 0.0), 1.0)
        p = c[i] + f * (c[i + 1] - c[i])
        out.append((GeoPoint(float(p[0]), float(p[1])), i))
    last = out[-1][1]
    out[-1] = (GeoPoint(float(c[-1, 0]), float(c[-1, 1])), last)
    return out


def truncate_polyline(polyline: Sequence[Sequence[float]], length: float) -> list[tuple[float, float]]:
    """Prefix of a polyline with arc length ``min(length, total)``."""
    c = [(float(p[0]), float(p[1])) for p in polyline]
    out = [c[0]]
    remaining = length
    for a, b in zip(c, c[1:]):
        d = math.hypot(b[0] - a[0], b[1] - a[1])
        if d < remaining:
            out.append(b)
            remaining -= d
            continue
        if d > 0:
            f = remaining / d
            out.append((a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])))
        break
    return out


def rect_buffer(segment: Sequence[Sequence[float]], width: float = ROAD_WIDTH_DEG) -> PolygonRing:
    """Rectangle of total ``width`` with the segment as its centerline."""
    (x1, y1), (x2, y2) = segment
    if width <= 0:
        raise GeometryError("buffer width must be positive")
    dx, dy = x2 - x1, y2 - y1
    length = math.hypot(dx, dy)
    if length == 0:
        raise GeometryError("degenerate segment")
    h = width / 2.0
    nx, ny = -dy / length * h, dx / length * h
    return PolygonRing.from_points([
        (x1 - nx, y1 - ny), (x2 - nx, y2 - ny), (x2 + nx, y2 + ny), (x1 + nx, y1 + ny),
    ])


def within_radius(center: Sequence[float], point: Sequence[float], radius: float) -> bool:
    """Inclusive disc test: distance <= radius."""
    return math.hypot(point[0] - center[0], point[1] - center[1]) <= radius
