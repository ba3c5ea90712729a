import random
from collections import Counter

import numpy as np
import pytest

from junctionvis.geometry import GeoPoint
from junctionvis.ingest import AccidentRecord, RoadSegment, TrafficCountPoint
from junctionvis.network import (
    MODEL_COLUMNS,
    IntersectionNode,
    ModelingTable,
    NetworkError,
    assign_accidents,
    assign_traffic,
    build_network,
    classify,
    detect_intersections,
    finalize_dataset,
    merge_close,
    modal_speed,
    nearest_nodes_for_accidents,
)

import oracles


def seg(wid, refs, coords, cls="primary", speed=None):
    return RoadSegment(wid, tuple(coords), cls, tuple(refs), speed, "mph" if speed else None)


def node(nid, x, y, classes=("primary", "other"), speeds=(None, None), **kw):
    kw.setdefault("merged_from", (nid,))
    return IntersectionNode(nid, GeoPoint(x, y), tuple(range(1, len(classes) + 1)), tuple(classes), tuple(speeds), **kw)


# detection

def test_cross_is_one_intersection():
    a = seg(1, [1, 2, 3], [(-1, 0), (0, 0), (1, 0)])
    b = seg(2, [4, 2, 5], [(0, -1), (0, 0), (0, 1)], "secondary")
    (n,) = detect_intersections([a, b])
    assert n.node_id == 2 and n.location == (0, 0)
    assert n.incident_segments == (1, 2) and n.road_type == "primary"


def test_pass_through_node_is_not_intersection():
    assert detect_intersections([seg(1, [1, 2, 3], [(0, 0), (1, 0), (2, 0)])]) == []


def test_t_junction_and_continuation():
    main = seg(1, [1, 2, 3], [(-1, 0), (0, 0), (1, 0)])
    stem = seg(2, [2, 4], [(0, 0), (0, -1)], "other")
    assert [n.node_id for n in detect_intersections([main, stem])] == [2]
    # two ways meeting end to end form a plain continuation, not a junction
    a = seg(1, [1, 2], [(0, 0), (1, 0)])
    b = seg(2, [2, 3], [(1, 0), (2, 0)])
    assert detect_intersections([a, b]) == []


def test_detection_max_speed_over_arms():
    a = seg(1, [1, 2, 3], [(-1, 0), (0, 0), (1, 0)], speed=20.0)
    b = seg(2, [4, 2, 5], [(0, -1), (0, 0), (0, 1)], "secondary", speed=30.0)
    (n,) = detect_intersections([a, b])
    assert n.max_speed == 30.0


# merging

def test_merge_pair_and_far_pair():
    merged = merge_close([node(5, 0, 0), node(3, 0.0001, 0)], 0.0003)
    assert len(merged) == 1
    assert merged[0].node_id == 3
    assert merged[0].location == pytest.approx((0.00005, 0))
    assert merged[0].merged_from == (3, 5)
    assert len(merge_close([node(1, 0, 0), node(2, 0.0004, 0)], 0.0003)) == 2


def test_merge_chain_single_linkage():
    nodes = [node(1, 0, 0), node(2, 0.00025, 0), node(3, 0.0005, 0)]
    assert [n.merged_from for n in merge_close(nodes, 0.0003)] == [(1, 2, 3)]


def test_merge_matches_union_find_and_order():
    rng = np.random.default_rng(4)
    pts = [tuple(p) for p in rng.uniform(0, 0.003, size=(60, 2))]
    nodes = [node(100 + i, *p) for i, p in enumerate(pts)]
    want = {frozenset(100 + i for i in g) for g in oracles.union_find_clusters(pts, 0.0003)}
    merged = merge_close(nodes, 0.0003)
    assert {frozenset(n.merged_from) for n in merged} == want
    shuffled = list(nodes)
    random.Random(1).shuffle(shuffled)
    assert merge_close(shuffled, 0.0003) == merged


def test_merged_arms_union():
    a = node(1, 0, 0, classes=("other", "other"))
    b = IntersectionNode(2, GeoPoint(0.0001, 0), (2, 7), ("other", "primary"), (None, 40.0))
    (m,) = merge_close([a, b], 0.0003)
    assert m.incident_segments == (1, 2, 7)
    assert m.road_type == "primary" and m.max_speed == 40.0


# classification

@pytest.mark.parametrize("arms, expected", [
    (("primary", "other"), "primary"),
    (("secondary", "secondary"), "secondary"),
    (("other", "other"), "secondary"),
])
def test_classify(arms, expected):
    assert classify(node(1, 0, 0, classes=arms)) == expected


def test_classify_monotone():
    for arms in [("secondary",), ("other",), ("secondary", "other"), ("primary",)]:
        with_primary = node(1, 0, 0, classes=arms + ("primary",))
        assert classify(with_primary) == "primary"


# accidents

def acc(k, x, y):
    return AccidentRecord(f"A{k}", GeoPoint(x, y), 2015)


def test_accident_nearest_and_uncounted():
    a, b = node(7, 0, 0), node(9, 0.00045, 0)
    counted = assign_accidents([a, b], [acc(1, 0.0002, 0)], 0.0003)
    assert [n.accident_count for n in counted] == [1, 0]
    far = [acc(2, 0.0002, 0.0005)]
    assert nearest_nodes_for_accidents([a, b], far, 0.0003) == [None]


def test_accident_tie_goes_to_smallest_id():
    a, b = node(9, 0.0004, 0), node(7, 0, 0)
    assert nearest_nodes_for_accidents([a, b], [acc(1, 0.0002, 0)], 0.0003) == [7]


def test_accident_boundary_inclusive():
    assert nearest_nodes_for_accidents([node(1, 0, 0)], [acc(1, 0.0003, 0)], 0.0003) == [1]


def test_no_double_counting():
    rng = np.random.default_rng(12)
    nodes = [node(i, *p) for i, p in enumerate(rng.uniform(0, 0.002, size=(25, 2)))]
    accidents = [acc(k, *p) for k, p in enumerate(rng.uniform(0, 0.002, size=(300, 2)))]
    owners = nearest_nodes_for_accidents(nodes, accidents)
    counted = assign_accidents(nodes, accidents)
    uncounted = sum(o is None for o in owners)
    assert sum(n.accident_count for n in counted) + uncounted == len(accidents)


# traffic

def test_traffic_examples():
    nodes = [node(1, 0, 0), node(2, 1, 1)]
    one = assign_traffic(nodes, [TrafficCountPoint(5, GeoPoint(3, 3), 700)])
    assert [n.traffic for n in one] == [700, 700]
    pts = [TrafficCountPoint(1, GeoPoint(0.1, 0), 1000), TrafficCountPoint(2, GeoPoint(0.9, 0.9), 9000)]
    assert [n.traffic for n in assign_traffic(nodes, pts)] == [1000, 9000]
    with pytest.raises(NetworkError, match="no traffic data"):
        assign_traffic(nodes, [])


def test_traffic_matches_brute_force():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        npts = [tuple(p) for p in rng.uniform(0, 1, size=(50, 2))]
        cpts = [tuple(p) for p in rng.uniform(0, 1, size=(20, 2))]
        # duplicate a location to exercise ties
        cpts[3] = cpts[7]
        ids = [int(v) for v in rng.permutation(20)]
        points = [TrafficCountPoint(i, GeoPoint(*p), float(i * 100)) for i, p in zip(ids, cpts)]
        got = assign_traffic([node(k, *p) for k, p in enumerate(npts)], points)
        for n, p in zip(got, npts):
            assert n.traffic == oracles.brute_nearest(p, cpts, ids) * 100


# table

def test_finalize_dataset_rows():
    nodes = [node(i, i, 0, accident_count=(0 if i in (2, 5, 8) else i + 1), traffic=100.0, max_speed=30.0)
             for i in range(10)]
    table = finalize_dataset(nodes, {i: 0.5 for i in range(10)})
    assert len(table) == 7
    assert table.node_ids == [0, 1, 3, 4, 6, 7, 9]


def test_finalize_dataset_encoding_and_exclusions():
    nodes = [
        node(1, 0, 0, accident_count=2, traffic=5.0, max_speed=30.0),
        node(2, 1, 0, classes=("other", "other"), accident_count=4, traffic=5.0, max_speed=30.0),
        node(3, 2, 0, classes=("secondary", "other"), accident_count=1, traffic=6.0, max_speed=20.0),
        node(4, 3, 0, accident_count=0, traffic=5.0, max_speed=30.0),
    ]
    table = finalize_dataset(nodes, {1: 0.7, 3: 0.4})
    assert table.node_ids == [1, 3]
    assert table.rows == [(2, 0.7, 5.0, 30.0, 1, 0), (1, 0.4, 6.0, 20.0, 0, 1)]
    assert table.columns == MODEL_COLUMNS
    assert table.n_candidates == 3
    csv_text = table.to_csv().splitlines()
    assert csv_text[0] == "node_id," + ",".join(MODEL_COLUMNS)
    assert csv_text[1] == "1,2,0.7,5.0,30.0,1,0"
    assert ModelingTable.from_dict(table.to_dict()) == table
    with pytest.raises(NetworkError, match="no modelable intersections"):
        finalize_dataset([nodes[1], nodes[3]])


def test_modal_speed_and_build_network():
    roads = [
        seg(1, [1, 2, 3], [(-1, 0), (0, 0), (1, 0)], "other"),
        seg(2, [4, 2, 5], [(0, -1), (0, 0), (0, 1)], "secondary"),
        seg(3, [6, 7], [(5, 5), (6, 6)], speed=30.0),
        seg(4, [8, 9], [(7, 7), (8, 8)], speed=30.0),
        seg(5, [10, 11], [(9, 9), (10, 10)], speed=20.0),
    ]
    assert modal_speed(roads) == 30.0
    (n,) = build_network(roads)
    assert n.max_speed == 30.0


def test_node_round_trip():
    n = node(3, 0.1, 0.2, speeds=(30.0, None), traffic=5.0, accident_count=2, merged_from=(3, 4))
    assert IntersectionNode.from_dict(n.to_dict()) == n
    assert Counter(n.arm_classes) == Counter({"primary": 1, "other": 1})
