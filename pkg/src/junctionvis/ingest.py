"""Parsers for the OSM extract, accident records and AADF traffic counts."""

from __future__ import annotations

import csv
import io
import logging
import math
import re
import xml.etree.ElementTree as ET
from collections import Counter
from dataclasses import asdict, dataclass, field
from datetime import datetime
from typing import IO, Any, Iterable, Sequence, Union

from .geometry import GeoPoint, GeometryError, PolygonRing, meters_to_deg

logger = logging.getLogger(__name__)

ByteSource = Union[bytes, bytearray, IO[bytes]]

ROAD_CLASSES = ("primary", "secondary", "other")
DRIVABLE_OTHER = frozenset({
    "motorway", "trunk", "tertiary", "unclassified", "residential", "living_street",
})
EXCLUDED_JUNCTIONS = frozenset({"roundabout", "circular"})
MIN_ACCIDENT_YEAR = 1979

DEFAULT_ACCIDENT_COLUMNS = {
    "accident_id": "accident_index",
    "longitude": "longitude",
    "latitude": "latitude",
    "year": "accident_year",
    "date": "date",
    "severity": "accident_severity",
}
DEFAULT_AADF_COLUMNS = {
    "count_point_id": "count_point_id",
    "latitude": "latitude",
    "longitude": "longitude",
    "flow": "all_motor_vehicles",
}


class IngestError(ValueError):
    """Input data that cannot be processed at all."""


class SchemaError(IngestError):
    pass


class OsmParseError(IngestError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class StudyArea:
    center: GeoPoint
    radius_m: float

    def __post_init__(self):
        if not self.radius_m > 0:
            raise ValueError("study area radius must be positive")

    @property
    def radius_deg(self) -> float:
        return meters_to_deg(self.radius_m)

    def contains(self, lon: float, lat: float) -> bool:
        return math.hypot(lon - self.center.lon, lat - self.center.lat) <= self.radius_deg


@dataclass(frozen=True)
class RoadSegment:
    way_id: int
    geometry: tuple[tuple[float, float], ...]
    highway_class: str
    node_ids: tuple[int, ...]
    max_speed: float | None = None
    speed_unit: str | None = None
    highway: str = ""

    def __post_init__(self):
        if len(self.geometry) < 2 or len(self.geometry) != len(self.node_ids):
            raise ValueError(f"way {self.way_id}: needs >=2 vertices matching node ids")
        if self.highway_class not in ROAD_CLASSES:
            raise ValueError(f"unknown highway class {self.highway_class!r}")
        if self.max_speed is not None and not self.max_speed > 0:
            raise ValueError("max_speed must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["geometry"] = [list(p) for p in self.geometry]
        d["node_ids"] = list(self.node_ids)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RoadSegment":
        return cls(
            way_id=d["way_id"],
            geometry=tuple(tuple(p) for p in d["geometry"]),
            highway_class=d["highway_class"],
            node_ids=tuple(d["node_ids"]),
            max_speed=d.get("max_speed"),
            speed_unit=d.get("speed_unit"),
            highway=d.get("highway", ""),
        )


@dataclass(frozen=True)
class BuildingFootprint:
    way_id: int
    ring: PolygonRing
    tags: dict = field(default_factory=dict, compare=False, hash=False)

    def to_dict(self) -> dict:
        return {"way_id": self.way_id, "ring": [list(p) for p in self.ring.vertices], "tags": dict(self.tags)}

    @classmethod
    def from_dict(cls, d: dict) -> "BuildingFootprint":
        return cls(d["way_id"], PolygonRing(tuple(tuple(p) for p in d["ring"])), d.get("tags", {}))


@dataclass(frozen=True)
class AccidentRecord:
    accident_id: str
    location: GeoPoint
    year: int
    severity: str = ""

    def to_dict(self) -> dict:
        return {"accident_id": self.accident_id, "location": list(self.location),
                "year": self.year, "severity": self.severity}

    @classmethod
    def from_dict(cls, d: dict) -> "AccidentRecord":
        return cls(d["accident_id"], GeoPoint(*d["location"]), d["year"], d.get("severity", ""))


@dataclass(frozen=True)
class TrafficCountPoint:
    count_point_id: int
    location: GeoPoint
    aadf: float

    def to_dict(self) -> dict:
        return {"count_point_id": self.count_point_id, "location": list(self.location), "aadf": self.aadf}

    @classmethod
    def from_dict(cls, d: dict) -> "TrafficCountPoint":
        return cls(d["count_point_id"], GeoPoint(*d["location"]), d["aadf"])


@dataclass
class OsmExtract:
    roads: list[RoadSegment]
    buildings: list[BuildingFootprint]
    warnings: Counter = field(default_factory=Counter)


@dataclass
class ParsedRows:
    records: list
    rejected: int = 0
    reasons: Counter = field(default_factory=Counter)


def _read_bytes(source: ByteSource) -> bytes:
    if isinstance(source, (bytes, bytearray)):
        return bytes(source)
    return source.read()


def _byte_offset(data: bytes, line: int, column: int) -> int:
    offset = 0
    for _ in range(line - 1):
        nl = data.find(b"\n", offset)
        if nl < 0:
            break
        offset = nl + 1
    return offset + column


_SPEED_RE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*(mph|km/h|kmh|kph)?\s*$", re.IGNORECASE)


def parse_maxspeed(value: str | None) -> tuple[float | None, str | None]:
    """``"30 mph"`` -> ``(30.0, "mph")``; bare numbers are km/h as in OSM."""
    if not value:
        return None, None
    m = _SPEED_RE.match(value)
    if not m:
        return None, None
    speed = float(m.group(1))
    if speed <= 0:
        return None, None
    unit = (m.group(2) or "kmh").lower()
    return speed, ("mph" if unit == "mph" else "kmh")


def road_class(tags: dict) -> str | None:
    """Map OSM tags to a road class, or None for ways that are not kept."""
    hw = tags.get("highway")
    if hw is None or hw.endswith("_link"):
        return None
    if tags.get("junction") in EXCLUDED_JUNCTIONS:
        return None
    if hw in ("primary", "secondary"):
        return hw
    if hw in DRIVABLE_OTHER:
        return "other"
    return None


def parse_osm_extract(source: ByteSource, area: StudyArea | None = None) -> OsmExtract:
    """Roads and building footprints from OSM XML, clipped to ``area``."""
    data = _read_bytes(source)
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        line, col = exc.position
        raise OsmParseError(f"malformed OSM XML: {exc.msg if hasattr(exc, 'msg') else exc}",
                            _byte_offset(data, line, col)) from None

    warnings: Counter = Counter()
    nodes: dict[int, tuple[float, float]] = {}
    for el in root.iter("node"):
        try:
            nid = int(el.attrib["id"])
            pt = GeoPoint(float(el.attrib["lon"]), float(el.attrib["lat"])).validated()
        except (KeyError, ValueError):
            warnings["bad_node"] += 1
            continue
        nodes[nid] = (pt.lon, pt.lat)

    roads: list[RoadSegment] = []
    buildings: list[BuildingFootprint] = []
    for el in root.iter("way"):
        try:
            wid = int(el.attrib["id"])
            refs = [int(nd.attrib["ref"]) for nd in el.findall("nd")]
        except (KeyError, ValueError):
            warnings["bad_way"] += 1
            continue
        tags = {t.attrib.get("k", ""): t.attrib.get("v", "") for t in el.findall("tag")}
        cls = road_class(tags)
        is_building = tags.get("building", "no") != "no"
        if cls is None and not is_building:
            continue
        if any(r not in nodes for r in refs):
            warnings["missing_node"] += 1
            continue
        coords = tuple(nodes[r] for r in refs)

        if cls is not None:
            if len(refs) < 2:
                warnings["short_way"] += 1
                continue
            speed, unit = parse_maxspeed(tags.get("maxspeed"))
            if tags.get("maxspeed") and speed is None:
                warnings["bad_maxspeed"] += 1
            roads.append(RoadSegment(wid, coords, cls, tuple(refs), speed, unit, tags["highway"]))
            continue

        if len(refs) < 4 or refs[0] != refs[-1]:
            warnings["unclosed_building"] += 1
            continue
        try:
            ring = PolygonRing.from_points(coords)
        except GeometryError:
            warnings["invalid_building"] += 1
            continue
        kept = {k: v for k, v in tags.items() if k in ("building", "height", "building:levels", "amenity")}
        buildings.append(BuildingFootprint(wid, ring, kept))

    for key, n in sorted(warnings.items()):
        logger.warning("osm: skipped %d element(s): %s", n, key)
    if area is not None:
        roads = clip_to_area(roads, area)
        buildings = clip_to_area(buildings, area)
    return OsmExtract(roads, buildings, warnings)


def _csv_rows(source: ByteSource) -> tuple[list[str], Iterable[dict | None]]:
    """Header plus rows; a row the csv module cannot read comes back as None."""
    try:
        text = _read_bytes(source).decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise IngestError(f"CSV is not valid UTF-8: {exc}") from None
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader, [])
    except csv.Error as exc:
        raise SchemaError(f"unreadable CSV header: {exc}") from None

    def rows():
        while True:
            try:
                values = next(reader)
            except StopIteration:
                return
            except csv.Error:
                yield None
                continue
            if values:
                yield dict(zip(header, values))

    return header, rows()


def _finite(value: Any) -> float:
    x = float(value)
    if not math.isfinite(x):
        raise ValueError("non-finite")
    return x


def _year_from_date(value: str) -> int:
    for fmt in ("%d/%m/%Y", "%Y-%m-%d", "%d-%m-%Y", "%Y/%m/%d"):
        try:
            return datetime.strptime(value.strip(), fmt).year
        except ValueError:
            pass
    raise ValueError(f"unparseable date {value!r}")


def parse_accident_csv(
    source: ByteSource,
    min_year: int = 2010,
    columns: dict[str, str] | None = None,
) -> ParsedRows:
    """Accident points from ``min_year`` onward.

    The year comes from the year column when present, else from the date
    column.
    """
    cols = {**DEFAULT_ACCIDENT_COLUMNS, **(columns or {})}
    header, rows = _csv_rows(source)
    for key in ("longitude", "latitude"):
        if cols[key] not in header:
            raise SchemaError(f"accident CSV missing column {cols[key]!r}")
    year_col = cols["year"] if cols["year"] in header else None
    date_col = cols["date"] if cols["date"] in header else None
    if year_col is None and date_col is None:
        raise SchemaError(f"accident CSV missing column {cols['year']!r} (or {cols['date']!r})")

    out = ParsedRows([])
    for i, row in enumerate(rows):
        try:
            if row is None:
                raise ValueError("unreadable row")
            pt = GeoPoint(_finite(row[cols["longitude"]]), _finite(row[cols["latitude"]])).validated()
            year = int(row[year_col]) if year_col and row.get(year_col) else _year_from_date(row[date_col])
        except (TypeError, ValueError, KeyError, GeometryError):
            out.rejected += 1
            out.reasons["unparseable"] += 1
            continue
        if year < MIN_ACCIDENT_YEAR:
            out.rejected += 1
            out.reasons["invalid_year"] += 1
            continue
        if year < min_year:
            out.rejected += 1
            out.reasons["before_min_year"] += 1
            continue
        acc_id = row.get(cols["accident_id"]) or f"row{i + 1}"
        out.records.append(AccidentRecord(acc_id, pt, year, row.get(cols["severity"], "") or ""))
    return out


def parse_aadf_csv(source: ByteSource, columns: dict[str, str] | None = None) -> ParsedRows:
    cols = {**DEFAULT_AADF_COLUMNS, **(columns or {})}
    header, rows = _csv_rows(source)
    for key in ("count_point_id", "latitude", "longitude", "flow"):
        if cols[key] not in header:
            raise SchemaError(f"AADF CSV missing column {cols[key]!r}")
    out = ParsedRows([])
    for row in rows:
        try:
            if row is None:
                raise ValueError("unreadable row")
            cp = int(row[cols["count_point_id"]])
            pt = GeoPoint(_finite(row[cols["longitude"]]), _finite(row[cols["latitude"]])).validated()
            flow = _finite(row[cols["flow"]])
        except (TypeError, ValueError, KeyError, GeometryError):
            out.rejected += 1
            out.reasons["unparseable"] += 1
            continue
        if flow < 0:
            logger.warning("aadf: negative flow at count point %s rejected", cp)
            out.rejected += 1
            out.reasons["negative_flow"] += 1
            continue
        out.records.append(TrafficCountPoint(cp, pt, flow))
    return out


def representative_points(item: Any) -> Sequence[Sequence[float]]:
    if isinstance(item, RoadSegment):
        return item.geometry
    if isinstance(item, BuildingFootprint):
        return item.ring.vertices
    if isinstance(item, (AccidentRecord, TrafficCountPoint)):
        return [item.location]
    if hasattr(item, "location"):
        return [item.location]
    raise TypeError(f"cannot locate {type(item).__name__}")


def clip_to_area(items: Iterable[Any], area: StudyArea) -> list:
    """Keep items with any representative vertex inside the study disc."""
    return [it for it in items if any(area.contains(p[0], p[1]) for p in representative_points(it))]
