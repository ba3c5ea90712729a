"""Staged batch run with content-hashed JSON checkpoints.

Stages run in a fixed order and each one writes ``<stage>.payload.json``
plus a small ``<stage>.ckpt.json`` recording the payload's SHA-256 and the
hash of the stage it was built from.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from . import glm
from .geometry import ACCIDENT_RADIUS_DEG, GeoPoint
from .ingest import (
    DEFAULT_AADF_COLUMNS,
    DEFAULT_ACCIDENT_COLUMNS,
    AccidentRecord,
    BuildingFootprint,
    RoadSegment,
    StudyArea,
    TrafficCountPoint,
    clip_to_area,
    parse_aadf_csv,
    parse_accident_csv,
    parse_osm_extract,
)
from .network import (
    IntersectionNode,
    ModelingTable,
    assign_traffic,
    build_network,
    detect_intersections,
    finalize_dataset,
    nearest_nodes_for_accidents,
)
from .visibility import IntersectionVisibility, VisibilityConfig, compute_visibility, visibility_geojson

logger = logging.getLogger(__name__)

STAGES = ("ingested", "networked", "visible", "assigned", "fitted")
STAGE_COMMANDS = {"ingest": "ingested", "network": "networked", "visibility": "visible",
                  "assign": "assigned", "fit": "fitted"}


class PipelineError(ValueError):
    pass


class StageOrderError(PipelineError):
    pass


class CheckpointError(PipelineError):
    pass


@dataclass
class RunConfig:
    osm_path: Path
    accidents_path: Path
    aadf_path: Path
    center: GeoPoint = GeoPoint(-0.19123, 51.50212)
    radius_m: float = 3000.0
    buffer_radius_deg: float = ACCIDENT_RADIUS_DEG
    merge_threshold_deg: float = ACCIDENT_RADIUS_DEG
    min_year: int = 2010
    visibility: VisibilityConfig = field(default_factory=VisibilityConfig)
    accident_columns: dict = field(default_factory=lambda: dict(DEFAULT_ACCIDENT_COLUMNS))
    aadf_columns: dict = field(default_factory=lambda: dict(DEFAULT_AADF_COLUMNS))
    models: str = "both"
    stage_dir: Path = Path("stages")
    modeling_table_path: Path | None = None
    report_path: Path | None = None
    geojson_path: Path | None = None

    def __post_init__(self):
        for name in ("radius_m", "buffer_radius_deg", "merge_threshold_deg"):
            if not getattr(self, name) > 0:
                raise PipelineError(f"config: {name} must be positive")
        if self.models not in ("1", "2", "both"):
            raise PipelineError("config: models must be '1', '2' or 'both'")
        self.center.validated()

    @property
    def area(self) -> StudyArea:
        return StudyArea(self.center, self.radius_m)

    @classmethod
    def from_dict(cls, d: dict, base: Path = Path(".")) -> "RunConfig":
        def path(v):
            if v is None:
                return None
            p = Path(v)
            return p if p.is_absolute() else base / p

        try:
            inputs = d["inputs"]
            outputs = d.get("outputs", {})
            center = d.get("center", {"lat": 51.50212, "lon": -0.19123})
            return cls(
                osm_path=path(inputs["osm"]),
                accidents_path=path(inputs["accidents"]),
                aadf_path=path(inputs["aadf"]),
                center=GeoPoint(float(center["lon"]), float(center["lat"])),
                radius_m=float(d.get("radius_m", 3000.0)),
                buffer_radius_deg=float(d.get("buffer_radius_deg", ACCIDENT_RADIUS_DEG)),
                merge_threshold_deg=float(d.get("merge_threshold_deg", ACCIDENT_RADIUS_DEG)),
                min_year=int(d.get("min_year", 2010)),
                visibility=VisibilityConfig(**d.get("visibility", {})),
                accident_columns={**DEFAULT_ACCIDENT_COLUMNS, **d.get("accident_columns", {})},
                aadf_columns={**DEFAULT_AADF_COLUMNS, **d.get("aadf_columns", {})},
                models=str(d.get("models", "both")),
                stage_dir=path(outputs.get("stage_dir", "stages")),
                modeling_table_path=path(outputs.get("modeling_table")),
                report_path=path(outputs.get("report")),
                geojson_path=path(outputs.get("geojson")),
            )
        except (KeyError, TypeError) as exc:
            raise PipelineError(f"config: missing or invalid field {exc}") from None

    @classmethod
    def load(cls, path: Path) -> "RunConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise PipelineError(f"config {path}: invalid JSON ({exc})") from None
        return cls.from_dict(data, path.parent)


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return _jsonable(obj.item())
    return obj


def dumps(obj: Any) -> bytes:
    """Canonical JSON encoding used for every checkpoint and report."""
    return (json.dumps(_jsonable(obj), sort_keys=True, indent=1, allow_nan=False) + "\n").encode("utf-8")


@dataclass(frozen=True)
class StudyCheckpoint:
    stage: str
    content_hash: str
    payload_path: Path
    prior_hash: str | None = None

    def load_payload(self) -> dict:
        data = self.payload_path.read_bytes()
        if hashlib.sha256(data).hexdigest() != self.content_hash:
            raise CheckpointError(f"checkpoint {self.stage}: payload hash mismatch")
        return json.loads(data)


def _ckpt_file(stage_dir: Path, stage: str) -> Path:
    return Path(stage_dir) / f"{stage}.ckpt.json"


def save_checkpoint(stage_dir: Path, stage: str, payload: dict, prior: StudyCheckpoint | None) -> StudyCheckpoint:
    stage_dir = Path(stage_dir)
    stage_dir.mkdir(parents=True, exist_ok=True)
    data = dumps(payload)
    digest = hashlib.sha256(data).hexdigest()
    payload_path = stage_dir / f"{stage}.payload.json"
    tmp = payload_path.with_suffix(".tmp")
    tmp.write_bytes(data)
    tmp.replace(payload_path)
    meta = {"stage": stage, "content_hash": digest, "payload": payload_path.name,
            "prior_hash": prior.content_hash if prior else None}
    _ckpt_file(stage_dir, stage).write_bytes(dumps(meta))
    return StudyCheckpoint(stage, digest, payload_path, meta["prior_hash"])


def load_checkpoint(stage_dir: Path, stage: str) -> StudyCheckpoint:
    f = _ckpt_file(stage_dir, stage)
    if not f.exists():
        raise StageOrderError(f"stage {stage!r} has not been run (no checkpoint in {stage_dir})")
    meta = json.loads(f.read_text(encoding="utf-8"))
    return StudyCheckpoint(meta["stage"], meta["content_hash"], Path(stage_dir) / meta["payload"], meta["prior_hash"])


def _require(stage_dir: Path, stage: str) -> tuple[StudyCheckpoint, dict]:
    ck = load_checkpoint(stage_dir, stage)
    return ck, ck.load_payload()


def _check_chain(stage_dir: Path, upto: str) -> None:
    """Each checkpoint before ``upto`` must point at the hash of its predecessor."""
    prev = None
    for st in STAGES[: STAGES.index(upto) + 1]:
        ck = load_checkpoint(stage_dir, st)
        if prev is not None and ck.prior_hash != prev.content_hash:
            raise CheckpointError(f"checkpoint {st!r} is stale: rerun from {st!r}")
        prev = ck


def _read_input(path: Path) -> bytes:
    if not Path(path).exists():
        raise FileNotFoundError(f"input file not found: {path}")
    return Path(path).read_bytes()


# -- stage bodies -------------------------------------------------------------

def _stage_ingest(cfg: RunConfig) -> dict:
    osm = parse_osm_extract(_read_input(cfg.osm_path), cfg.area)
    acc = parse_accident_csv(_read_input(cfg.accidents_path), cfg.min_year, cfg.accident_columns)
    aadf = parse_aadf_csv(_read_input(cfg.aadf_path), cfg.aadf_columns)
    accidents = clip_to_area(acc.records, cfg.area)
    points = clip_to_area(aadf.records, cfg.area)
    return {
        "roads": [r.to_dict() for r in osm.roads],
        "buildings": [b.to_dict() for b in osm.buildings],
        "accidents": [a.to_dict() for a in accidents],
        "traffic_points": [t.to_dict() for t in points],
        "counts": {
            "osm_warnings": dict(sorted(osm.warnings.items())),
            "accident_rows_rejected": acc.rejected,
            "accident_reject_reasons": dict(sorted(acc.reasons.items())),
            "accidents_outside_area": len(acc.records) - len(accidents),
            "aadf_rows_rejected": aadf.rejected,
            "aadf_outside_area": len(aadf.records) - len(points),
        },
    }


def _roads(payload: dict) -> list[RoadSegment]:
    return [RoadSegment.from_dict(r) for r in payload["roads"]]


def _stage_network(cfg: RunConfig, ingested: dict) -> dict:
    roads = _roads(ingested)
    if not roads:
        raise PipelineError("no road segments inside the study area")
    detected = detect_intersections(roads)
    nodes = build_network(roads, cfg.merge_threshold_deg)
    return {
        "nodes": [n.to_dict() for n in nodes],
        "counts": {"detected": len(detected), "after_merge": len(nodes),
                   "modelable": sum(n.modelable for n in nodes)},
    }


def _stage_visibility(cfg: RunConfig, ingested: dict, networked: dict) -> dict:
    nodes = [IntersectionNode.from_dict(d) for d in networked["nodes"]]
    rings = [BuildingFootprint.from_dict(b).ring for b in ingested["buildings"]]
    targets = [n for n in nodes if n.modelable]
    results = compute_visibility(targets, _roads(ingested), rings, cfg.visibility)
    return {"visibility": [r.to_dict() for r in results]}


def _stage_assign(cfg: RunConfig, ingested: dict, networked: dict, visible: dict) -> dict:
    nodes = [IntersectionNode.from_dict(d) for d in networked["nodes"]]
    accidents = [AccidentRecord.from_dict(a) for a in ingested["accidents"]]
    points = [TrafficCountPoint.from_dict(t) for t in ingested["traffic_points"]]
    vis = {d["node_id"]: IntersectionVisibility.from_dict(d).value(cfg.visibility) for d in visible["visibility"]}

    owners = nearest_nodes_for_accidents(nodes, accidents, cfg.buffer_radius_deg)
    counts: dict[int, int] = {}
    for nid in owners:
        if nid is not None:
            counts[nid] = counts.get(nid, 0) + 1
    nodes = [replace(n, accident_count=counts.get(n.node_id, 0)) for n in nodes]
    nodes = assign_traffic(nodes, points)
    table = finalize_dataset(nodes, vis)
    return {
        "nodes": [n.to_dict() for n in nodes],
        "table": table.to_dict(),
        "counts": {
            "accidents": len(accidents),
            "accidents_counted": sum(counts.values()),
            "accidents_uncounted": owners.count(None),
            "candidate_intersections": table.n_candidates,
            "modeled_intersections": len(table),
        },
    }


def summarize(table: ModelingTable) -> dict:
    """Per-variable count, range, mean and sample SD, plus road-type shares."""
    out: dict[str, Any] = {"n": len(table)}
    for name in ("accident_count", "visible_percentage", "max_speed", "traffic"):
        try:
            v = table.column(name)
        except KeyError:
            continue
        out[name] = {
            "min": float(v.min()), "max": float(v.max()), "mean": float(v.mean()),
            "sd": float(v.std(ddof=1)) if len(v) > 1 else 0.0,
        }
    prim = table.column("road_type_primary")
    out["road_type"] = {"primary": float(prim.mean()), "secondary": float(1.0 - prim.mean())}
    return out


def _stage_fit(cfg: RunConfig, assigned: dict, models: str | None = None) -> dict:
    table = ModelingTable.from_dict(assigned["table"])
    which = models or cfg.models
    wanted = ("1", "2") if which == "both" else (which,)
    fits = {}
    for m in wanted:
        fits[f"model_{m}"] = glm.fit_poisson_irls(glm.build_design(table, "m" + m))
    payload = {
        "fits": {k: f.to_dict() for k, f in fits.items()},
        "summary": summarize(table),
        "counts": assigned["counts"],
        "comparison": None,
    }
    if len(fits) == 2:
        payload["comparison"] = glm.compare_models(fits["model_1"], fits["model_2"]).to_dict()
    return payload


def run_stage(stage: str, cfg: RunConfig, stage_dir: Path | None = None, models: str | None = None) -> StudyCheckpoint:
    """Execute exactly one stage, reading the checkpoints it depends on."""
    stage = STAGE_COMMANDS.get(stage, stage)
    if stage not in STAGES:
        raise PipelineError(f"unknown stage {stage!r}")
    sd = Path(stage_dir or cfg.stage_dir)
    pos = STAGES.index(stage)
    prior = None
    if pos > 0:
        prev = STAGES[pos - 1]
        _check_chain(sd, prev)
        prior = load_checkpoint(sd, prev)

    logger.info("running stage %s", stage)
    if stage == "ingested":
        payload = _stage_ingest(cfg)
    elif stage == "networked":
        payload = _stage_network(cfg, _require(sd, "ingested")[1])
    elif stage == "visible":
        payload = _stage_visibility(cfg, _require(sd, "ingested")[1], _require(sd, "networked")[1])
    elif stage == "assigned":
        payload = _stage_assign(cfg, _require(sd, "ingested")[1], _require(sd, "networked")[1],
                                _require(sd, "visible")[1])
    else:
        payload = _stage_fit(cfg, _require(sd, "assigned")[1], models)
    ck = save_checkpoint(sd, stage, payload, prior)
    if stage == "assigned":
        out = cfg.modeling_table_path or sd / "modeling_table.csv"
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(ModelingTable.from_dict(payload["table"]).to_csv(), encoding="utf-8")
    return ck


def load_fits(payload: dict) -> dict[str, glm.GlmFit]:
    return {k: glm.GlmFit.from_dict(v) for k, v in payload["fits"].items()}


def emit_geojson(stage_dir: Path) -> bytes:
    _, payload = _require(Path(stage_dir), "visible")
    results = [IntersectionVisibility.from_dict(d) for d in payload["visibility"]]
    return dumps(visibility_geojson(results))


def run_all(cfg: RunConfig, models: str | None = None) -> dict[str, StudyCheckpoint]:
    out = {}
    for st in STAGES:
        out[st] = run_stage(st, cfg, models=models)
    return out

