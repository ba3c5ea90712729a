"""Deterministic synthetic city: grid roads, block buildings, accidents, counts.

Used by the test suite and handy for trying the CLI without real data.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from xml.sax.saxutils import quoteattr

import numpy as np

from .geometry import DEG_PER_METER, GeoPoint

CENTER = GeoPoint(-0.19123, 51.50212)


def _road_spec(k: int, n: int) -> tuple[str, str | None]:
    if k == n // 2:
        return "primary", "30 mph"
    if k == 1:
        return "secondary", "20 mph"
    if k == n - 2:
        return "secondary", "30 mph"
    return "residential", ("20 mph" if k % 2 == 0 else "30 mph" if k % 3 == 0 else None)


def make_city(
    grid: int = 7,
    spacing_m: float = 150.0,
    n_buildings: int = 50,
    n_accidents: int = 300,
    seed: int = 7,
    center: GeoPoint = CENTER,
    scatter_deg: float = 0.00015,
) -> dict[str, bytes]:
    """Return file contents keyed by name: city.osm, accidents.csv, aadf.csv.

    Lengths are in meters under the fixed 0.000133 deg/m factor, while
    accident scatter around intersections is given directly in degrees so it
    matches the 0.0003 deg counting radius.
    """
    rng = np.random.default_rng(seed)
    half = (grid - 1) * spacing_m / 2.0

    def to_deg(x: float, y: float) -> tuple[float, float]:
        return (round(center.lon + x * DEG_PER_METER, 9), round(center.lat + y * DEG_PER_METER, 9))

    # grid nodes, jittered slightly so intersections differ
    node_xy = {}
    nid = 1000
    grid_ids = np.zeros((grid, grid), dtype=int)
    for i in range(grid):
        for j in range(grid):
            jitter = rng.uniform(-4, 4, size=2)
            node_xy[nid] = (i * spacing_m - half + jitter[0], j * spacing_m - half + jitter[1])
            grid_ids[i, j] = nid
            nid += 1

    ways = []
    wid = 1
    for j in range(grid):
        cls, speed = _road_spec(j, grid)
        ways.append((wid, [int(grid_ids[i, j]) for i in range(grid)], {"highway": cls, "maxspeed": speed}))
        wid += 1
    for i in range(grid):
        cls, speed = _road_spec(i, grid)
        ways.append((wid, [int(grid_ids[i, j]) for j in range(grid)], {"highway": cls, "maxspeed": speed}))
        wid += 1
    # a slip road; excluded at parse time
    a, b = int(grid_ids[grid // 2, grid // 2]), int(grid_ids[grid // 2 + 1, grid // 2 + 1])
    ways.append((wid, [a, b], {"highway": "primary_link"}))
    wid += 1

    # buildings: axis-aligned blocks set back from the streets by a random margin
    blocks = [(i, j) for i in range(grid - 1) for j in range(grid - 1)]
    order = rng.permutation(len(blocks))
    buildings = []
    setbacks = {}
    for k in range(n_buildings):
        i, j = blocks[order[k % len(blocks)]]
        x0 = i * spacing_m - half
        y0 = j * spacing_m - half
        sb = float(rng.uniform(4, 30))
        setbacks.setdefault((i, j), []).append(sb)
        if k < len(blocks):
            xa, ya = x0 + sb, y0 + sb
            xb = x0 + spacing_m - float(rng.uniform(4, 30))
            yb = y0 + spacing_m - float(rng.uniform(4, 30))
            if k % 5 == 0:
                # L-shaped footprint
                mx, my = (xa + xb) / 2, (ya + yb) / 2
                ring = [(xa, ya), (xb, ya), (xb, my), (mx, my), (mx, yb), (xa, yb)]
            else:
                ring = [(xa, ya), (xb, ya), (xb, yb), (xa, yb)]
        else:
            # small outbuilding in the block centre
            cx, cy = x0 + spacing_m / 2, y0 + spacing_m / 2
            r = 10.0
            ring = [(cx - r, cy - r), (cx + r, cy - r), (cx + r, cy + r), (cx - r, cy + r)]
        ids = []
        for x, y in ring:
            node_xy[nid] = (x, y)
            ids.append(nid)
            nid += 1
        ids.append(ids[0])
        buildings.append((wid, ids))
        wid += 1
    # unclosed building outline; skipped with a warning
    node_xy[nid], node_xy[nid + 1], node_xy[nid + 2] = (half + 40, 0), (half + 60, 0), (half + 60, 20)
    broken = (wid, [nid, nid + 1, nid + 2])
    nid += 3
    wid += 1

    osm = io.StringIO()
    osm.write('<?xml version="1.0" encoding="UTF-8"?>\n<osm version="0.6" generator="junctionvis-synthetic">\n')
    for k in sorted(node_xy):
        lon, lat = to_deg(*node_xy[k])
        osm.write(f'  <node id="{k}" lat="{lat:.9f}" lon="{lon:.9f}"/>\n')
    for w, refs, tags in ways:
        osm.write(f'  <way id="{w}">\n')
        for r in refs:
            osm.write(f'    <nd ref="{r}"/>\n')
        for key, v in tags.items():
            if v is not None:
                osm.write(f"    <tag k={quoteattr(key)} v={quoteattr(v)}/>\n")
        osm.write("  </way>\n")
    for w, refs in buildings + [broken]:
        osm.write(f'  <way id="{w}">\n')
        for r in refs:
            osm.write(f'    <nd ref="{r}"/>\n')
        osm.write('    <tag k="building" v="yes"/>\n  </way>\n')
    osm.write("</osm>\n")

    # accidents cluster around intersections; rate grows with class and openness
    acc = io.StringIO()
    wr = csv.writer(acc, lineterminator="\n")
    wr.writerow(["accident_index", "longitude", "latitude", "date", "accident_severity"])
    weights = []
    for i in range(grid):
        for j in range(grid):
            ci, _ = _road_spec(i, grid)
            cj, _ = _road_spec(j, grid)
            base = 3.0 if "primary" in (ci, cj) else 1.5 if "secondary" in (ci, cj) else 0.4
            near = [s for (bi, bj), ss in setbacks.items() if abs(bi + 0.5 - i) < 1 and abs(bj + 0.5 - j) < 1
                    for s in ss]
            openness = np.mean(near) if near else 30.0
            weights.append(base * math.exp(0.04 * (openness - 15.0)))
    weights = np.asarray(weights) / np.sum(weights)
    n_near = int(n_accidents * 0.85)
    which = rng.choice(grid * grid, size=n_near, p=weights)
    rows = []
    for cell in which:
        lon, lat = to_deg(*node_xy[int(grid_ids.flat[cell])])
        dlon, dlat = rng.normal(0, scatter_deg, size=2)
        rows.append((lon + dlon, lat + dlat))
    for _ in range(n_accidents - n_near):
        rows.append(to_deg(*rng.uniform(-half, half, size=2)))
    for k, (lon, lat) in enumerate(rows):
        year = int(rng.integers(2008, 2022))
        day, month = int(rng.integers(1, 29)), int(rng.integers(1, 13))
        wr.writerow([f"SYN{k:05d}", f"{lon:.9f}", f"{lat:.9f}", f"{day:02d}/{month:02d}/{year}",
                     int(rng.integers(1, 4))])
    wr.writerow(["SYNBAD", "", f"{center.lat:.6f}", "01/01/2015", 3])

    # AADF count points at every other road midpoint
    aadf = io.StringIO()
    wa = csv.writer(aadf, lineterminator="\n")
    wa.writerow(["count_point_id", "year", "latitude", "longitude", "all_motor_vehicles"])
    cp = 5000
    for i in range(0, grid - 1, 2):
        for j in range(grid):
            cls, _ = _road_spec(j, grid)
            for x, y in (((i + 0.5) * spacing_m - half, j * spacing_m - half),
                         (j * spacing_m - half, (i + 0.5) * spacing_m - half)):
                flow = {"primary": 24000, "secondary": 9000}.get(cls, 2500) + int(rng.integers(0, 2000))
                lon, lat = to_deg(x, y)
                wa.writerow([cp, 2019, f"{lat:.9f}", f"{lon:.9f}", flow])
                cp += 1
    wa.writerow([cp, 2019, f"{center.lat:.6f}", f"{center.lon:.6f}", -5])

    return {
        "city.osm": osm.getvalue().encode("utf-8"),
        "accidents.csv": acc.getvalue().encode("utf-8"),
        "aadf.csv": aadf.getvalue().encode("utf-8"),
    }


def write_city(directory: Path, **kwargs) -> Path:
    """Write the synthetic inputs plus a ``config.json`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, data in make_city(**kwargs).items():
        (directory / name).write_bytes(data)
    center = kwargs.get("center", CENTER)
    config = {
        "center": {"lat": center.lat, "lon": center.lon},
        "radius_m": 3000,
        "buffer_radius_deg": 0.0003,
        "merge_threshold_deg": 0.0003,
        "min_year": 2010,
        "visibility": {"fov": 80, "ray_step": 1, "max_range_m": 100, "interp_spacing_m": 10,
                       "sample_extent_m": 50},
        "inputs": {"osm": "city.osm", "accidents": "accidents.csv", "aadf": "aadf.csv"},
        "models": "both",
        "outputs": {"stage_dir": "stages", "modeling_table": "out/modeling_table.csv",
                    "report": "out/report.json", "geojson": "out/visibility.geojson"},
    }
    path = directory / "config.json"
    path.write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")
    return path
