import pytest

from junctionvis import pipeline
from junctionvis.ingest import BuildingFootprint, RoadSegment
from junctionvis.network import IntersectionNode
from junctionvis.synthetic import write_city

_ACCEPTANCE: list[tuple[str, str, str]] = []


@pytest.fixture
def criterion():
    """Record one acceptance line; printed in the terminal summary."""

    def record(name: str, passed: bool, detail: str = "") -> bool:
        _ACCEPTANCE.append((name, "PASS" if passed else "FAIL", detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"[{status}] {name}" + (f"  ({detail})" if detail else ""))


@pytest.fixture(scope="session")
def city_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("city")
    write_city(d)
    return d


@pytest.fixture(scope="session")
def city_network(tmp_path_factory):
    """Roads, building rings and merged intersections of the synthetic city."""
    d = tmp_path_factory.mktemp("city_net")
    cfg = pipeline.RunConfig.load(write_city(d))
    for stage in ("ingest", "network"):
        pipeline.run_stage(stage, cfg)
    _, ing = pipeline._require(cfg.stage_dir, "ingested")
    _, net = pipeline._require(cfg.stage_dir, "networked")
    roads = [RoadSegment.from_dict(r) for r in ing["roads"]]
    rings = [BuildingFootprint.from_dict(b).ring for b in ing["buildings"]]
    nodes = [IntersectionNode.from_dict(n) for n in net["nodes"]]
    return roads, rings, nodes
