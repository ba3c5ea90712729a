"""Bounding-box index over building footprints and nearest-point lookup."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .geometry import PolygonRing, distance_to_ring


class ObstacleIndex:
    """Buildings with precomputed bounding boxes and edge arrays.

    Queries return building positions in insertion order, which keeps
    downstream float reductions independent of how the index is queried.
    """

    def __init__(self, rings: Sequence[PolygonRing]):
        self.rings = list(rings)
        if self.rings:
            self.bboxes = np.array([r.bbox for r in self.rings], dtype=float)
        else:
            self.bboxes = np.zeros((0, 4))
        self._edges = [r.edges() for r in self.rings]

    def __len__(self) -> int:
        return len(self.rings)

    def query_bbox(self, minx: float, miny: float, maxx: float, maxy: float) -> np.ndarray:
        b = self.bboxes
        mask = (b[:, 0] <= maxx) & (b[:, 2] >= minx) & (b[:, 1] <= maxy) & (b[:, 3] >= miny)
        return np.flatnonzero(mask)

    def near(self, point: Sequence[float], radius: float) -> list[int]:
        """Buildings with any part within ``radius`` of ``point``."""
        x, y = float(point[0]), float(point[1])
        cand = self.query_bbox(x - radius, y - radius, x + radius, y + radius)
        return [int(i) for i in cand if distance_to_ring((x, y), self.rings[i]) <= radius]

    def edges_of(self, ids: Sequence[int]) -> np.ndarray:
        if len(ids) == 0:
            return np.zeros((0, 2, 2))
        return np.concatenate([self._edges[i] for i in ids])


def nearest_with_ties(
    points: np.ndarray,
    ids: Sequence[int],
    queries: np.ndarray,
) -> list[tuple[int, float]]:
    """Nearest point for each query; ties broken by smallest id.

    Returns (position into ``points``, distance) per query. Equivalent to an
    exhaustive search: the tree supplies the nearest distance, then every
    point within that distance (plus float slack) is rescored exactly.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    queries = np.asarray(queries, dtype=float).reshape(-1, 2)
    tree = cKDTree(points)
    d0, _ = tree.query(queries, k=1)
    out = []
    for q, d in zip(queries, d0):
        cands = tree.query_ball_point(q, r=d * (1 + 1e-9) + 1e-15)
        best = min(cands, key=lambda j: (math.hypot(points[j][0] - q[0], points[j][1] - q[1]), ids[j]))
        out.append((best, math.hypot(points[best][0] - q[0], points[best][1] - q[1])))
    return out
