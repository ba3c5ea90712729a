"""Intersection detection, merging, classification and attribute assignment."""

from __future__ import annotations

import csv
import io
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .geometry import ACCIDENT_RADIUS_DEG, GeoPoint, within_radius
from .index import nearest_with_ties
from .ingest import AccidentRecord, RoadSegment, TrafficCountPoint

MODEL_COLUMNS = (
    "accident_count", "visible_percentage", "traffic", "max_speed",
    "road_type_primary", "road_type_secondary",
)


class NetworkError(ValueError):
    pass


@dataclass(frozen=True)
class IntersectionNode:
    node_id: int
    location: GeoPoint
    incident_segments: tuple[int, ...]
    arm_classes: tuple[str, ...]
    arm_speeds: tuple[float | None, ...]
    road_type: str = "secondary"
    max_speed: float | None = None
    traffic: float | None = None
    accident_count: int = 0
    merged_from: tuple[int, ...] = ()

    @property
    def modelable(self) -> bool:
        """At least one arm is a primary or secondary road."""
        return any(c in ("primary", "secondary") for c in self.arm_classes)

    def to_dict(self) -> dict:
        return {
            "node_id": self.node_id,
            "location": list(self.location),
            "incident_segments": list(self.incident_segments),
            "arm_classes": list(self.arm_classes),
            "arm_speeds": list(self.arm_speeds),
            "road_type": self.road_type,
            "max_speed": self.max_speed,
            "traffic": self.traffic,
            "accident_count": self.accident_count,
            "merged_from": list(self.merged_from),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IntersectionNode":
        return cls(
            node_id=d["node_id"],
            location=GeoPoint(*d["location"]),
            incident_segments=tuple(d["incident_segments"]),
            arm_classes=tuple(d["arm_classes"]),
            arm_speeds=tuple(d["arm_speeds"]),
            road_type=d["road_type"],
            max_speed=d["max_speed"],
            traffic=d["traffic"],
            accident_count=d["accident_count"],
            merged_from=tuple(d["merged_from"]),
        )


def classify(node: IntersectionNode) -> str:
    """Primary when any incident road is primary, otherwise secondary."""
    if not node.arm_classes:
        raise NetworkError(f"node {node.node_id} has no incident segments")
    return "primary" if "primary" in node.arm_classes else "secondary"


def _max_speed(speeds: Sequence[float | None]) -> float | None:
    vals = [s for s in speeds if s is not None]
    return max(vals) if vals else None


def detect_intersections(segments: Sequence[RoadSegment]) -> list[IntersectionNode]:
    """Nodes shared by at least two ways with at least three arms."""
    ways_at: dict[int, set[int]] = defaultdict(set)
    arms: Counter = Counter()
    loc: dict[int, tuple[float, float]] = {}
    by_id = {s.way_id: s for s in segments}
    for seg in segments:
        ids = seg.node_ids
        closed = len(ids) > 2 and ids[0] == ids[-1]
        seen = set()
        for pos, nid in enumerate(ids):
            if closed and pos == len(ids) - 1:
                continue
            if nid in seen:
                continue
            seen.add(nid)
            ways_at[nid].add(seg.way_id)
            loc[nid] = seg.geometry[pos]
            end = (pos == 0 or pos == len(ids) - 1) and not closed
            arms[nid] += 1 if end else 2

    nodes = []
    for nid in sorted(ways_at):
        if len(ways_at[nid]) < 2 or arms[nid] < 3:
            continue
        wids = tuple(sorted(ways_at[nid]))
        classes = tuple(by_id[w].highway_class for w in wids)
        speeds = tuple(by_id[w].max_speed for w in wids)
        node = IntersectionNode(
            node_id=nid,
            location=GeoPoint(*loc[nid]),
            incident_segments=wids,
            arm_classes=classes,
            arm_speeds=speeds,
            max_speed=_max_speed(speeds),
            merged_from=(nid,),
        )
        nodes.append(replace(node, road_type=classify(node)))
    return nodes


def _clusters(points: np.ndarray, threshold: float) -> list[list[int]]:
    n = len(points)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    if n > 1:
        # slack on the tree radius; the exact inclusive test decides
        for i, j in cKDTree(points).query_pairs(threshold * (1 + 1e-9)):
            if within_radius(points[i], points[j], threshold):
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    groups: dict[int, list[int]] = defaultdict(list)
    for i in range(n):
        groups[find(i)].append(i)
    return list(groups.values())


def merge_close(nodes: Sequence[IntersectionNode], threshold: float = ACCIDENT_RADIUS_DEG) -> list[IntersectionNode]:
    """Single-linkage merge of nodes within ``threshold`` degrees."""
    if threshold <= 0:
        raise NetworkError("merge threshold must be positive")
    ordered = sorted(nodes, key=lambda n: n.node_id)
    if not ordered:
        return []
    pts = np.array([n.location for n in ordered], dtype=float)
    out = []
    for members in _clusters(pts, threshold):
        group = [ordered[i] for i in sorted(members)]
        if len(group) == 1:
            out.append(group[0])
            continue
        arm: dict[int, tuple[str, float | None]] = {}
        for g in group:
            for w, c, s in zip(g.incident_segments, g.arm_classes, g.arm_speeds):
                arm[w] = (c, s)
        wids = tuple(sorted(arm))
        lon = math.fsum(g.location.lon for g in group) / len(group)
        lat = math.fsum(g.location.lat for g in group) / len(group)
        merged = IntersectionNode(
            node_id=group[0].node_id,
            location=GeoPoint(lon, lat),
            incident_segments=wids,
            arm_classes=tuple(arm[w][0] for w in wids),
            arm_speeds=tuple(arm[w][1] for w in wids),
            merged_from=tuple(sorted(x for g in group for x in (g.merged_from or (g.node_id,)))),
        )
        out.append(replace(merged, road_type=classify(merged), max_speed=_max_speed(merged.arm_speeds)))
    out.sort(key=lambda n: n.node_id)
    return out


def modal_speed(segments: Sequence[RoadSegment]) -> float | None:
    counts = Counter(s.max_speed for s in segments if s.max_speed is not None)
    if not counts:
        return None
    top = max(counts.values())
    return min(v for v, c in counts.items() if c == top)


def fill_max_speed(nodes: Sequence[IntersectionNode], segments: Sequence[RoadSegment]) -> list[IntersectionNode]:
    """Give nodes without any signed arm the study-area modal speed."""
    mode = modal_speed(segments)
    return [n if n.max_speed is not None else replace(n, max_speed=mode) for n in nodes]


def build_network(segments: Sequence[RoadSegment], merge_threshold: float = ACCIDENT_RADIUS_DEG) -> list[IntersectionNode]:
    nodes = merge_close(detect_intersections(segments), merge_threshold)
    return fill_max_speed(nodes, segments)


def nearest_nodes_for_accidents(
    nodes: Sequence[IntersectionNode],
    accidents: Sequence[AccidentRecord],
    radius: float = ACCIDENT_RADIUS_DEG,
) -> list[int | None]:
    """For each accident, the nearest node within ``radius`` (ties: smallest id)."""
    if radius <= 0:
        raise NetworkError("radius must be positive")
    if not nodes or not accidents:
        return [None] * len(accidents)
    pts = np.array([n.location for n in nodes], dtype=float)
    tree = cKDTree(pts)
    out: list[int | None] = []
    for acc in accidents:
        p = acc.location
        cands = [
            i for i in tree.query_ball_point(p, r=radius * (1 + 1e-9))
            if within_radius(pts[i], p, radius)
        ]
        if not cands:
            out.append(None)
            continue
        best = min(cands, key=lambda i: (math.hypot(pts[i][0] - p[0], pts[i][1] - p[1]), nodes[i].node_id))
        out.append(nodes[best].node_id)
    return out


def assign_accidents(
    nodes: Sequence[IntersectionNode],
    accidents: Sequence[AccidentRecord],
    radius: float = ACCIDENT_RADIUS_DEG,
) -> list[IntersectionNode]:
    """Count each accident once, at its nearest node within ``radius``."""
    counts = Counter(nid for nid in nearest_nodes_for_accidents(nodes, accidents, radius) if nid is not None)
    return [replace(n, accident_count=counts.get(n.node_id, 0)) for n in nodes]


def assign_traffic(nodes: Sequence[IntersectionNode], count_points: Sequence[TrafficCountPoint]) -> list[IntersectionNode]:
    if not count_points:
        raise NetworkError("no traffic data")
    if not nodes:
        return []
    pts = np.array([c.location for c in count_points], dtype=float)
    ids = [c.count_point_id for c in count_points]
    nearest = nearest_with_ties(pts, ids, np.array([n.location for n in nodes], dtype=float))
    return [replace(n, traffic=float(count_points[j].aadf)) for n, (j, _) in zip(nodes, nearest)]


@dataclass
class ModelingTable:
    node_ids: list[int]
    rows: list[tuple]
    columns: tuple[str, ...] = MODEL_COLUMNS
    n_candidates: int = 0

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        if name not in self.columns:
            raise KeyError(name)
        j = self.columns.index(name)
        vals = [r[j] for r in self.rows]
        if any(v is None for v in vals):
            raise KeyError(f"column {name!r} has missing values")
        return np.asarray(vals, dtype=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("node_id",) + self.columns)
        for nid, row in zip(self.node_ids, self.rows):
            w.writerow((nid,) + tuple("" if v is None else repr(v) if isinstance(v, float) else v for v in row))
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"columns": list(self.columns), "node_ids": list(self.node_ids),
                "rows": [list(r) for r in self.rows], "n_candidates": self.n_candidates}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelingTable":
        return cls(list(d["node_ids"]), [tuple(r) for r in d["rows"]], tuple(d["columns"]), d.get("n_candidates", 0))


def finalize_dataset(
    nodes: Sequence[IntersectionNode],
    visible: Mapping[int, float] | None = None,
) -> ModelingTable:
    """Rows for nodes with at least one accident and a primary/secondary arm."""
    visible = visible or {}
    ids, rows = [], []
    candidates = [n for n in nodes if n.modelable]
    for n in sorted(candidates, key=lambda n: n.node_id):
        if n.accident_count < 1:
            continue
        rtype = classify(n)
        rows.append((
            n.accident_count,
            visible.get(n.node_id),
            n.traffic,
            n.max_speed,
            int(rtype == "primary"),
            int(rtype == "secondary"),
        ))
        ids.append(n.node_id)
    if not rows:
        raise NetworkError("no modelable intersections")
    return ModelingTable(ids, rows, n_candidates=len(candidates))
