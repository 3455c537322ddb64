import math

import numpy as np
import pytest

from interactnav.scenario import (
    Crosswalk,
    InvalidPathError,
    RefPath,
    build_map,
    crosswalk_conflict,
    default_map,
    default_map_config,
    find_conflicts,
    frenet_project,
)


def test_point_on_waypoint_projects_to_its_arclength():
    path = RefPath([[0, 0], [3, 4], [3, 10]])
    for k, (x, y) in enumerate(path.waypoints):
        s, d = frenet_project(path, (x, y))
        assert s == pytest.approx(path.cumulative_arclength[k])
        assert d == pytest.approx(0.0, abs=1e-12)


def test_left_offset_at_segment_midpoint():
    path = RefPath([[0, 0], [10, 0]])
    s, d = frenet_project(path, (5.0, 1.0))
    assert (s, d) == pytest.approx((5.0, 1.0))
    assert frenet_project(path, (5.0, -1.0))[1] == pytest.approx(-1.0)


def test_projection_matches_dense_sampling():
    path = default_map().ego_turn_path
    rng = np.random.default_rng(0)
    ss = np.linspace(0.0, path.length, 10_000)
    dense = np.array([path.point_at(s) for s in ss])
    for _ in range(50):
        p = rng.uniform([-25, -25], [5, 5])
        s, d = frenet_project(path, p)
        k = np.argmin(np.hypot(*(dense - p).T))
        assert abs(math.hypot(*(np.array(path.point_at(s)) - p)) - np.hypot(*(dense[k] - p))) < 0.01


def test_round_trip_on_path():
    path = default_map().ego_turn_path
    for s in np.linspace(0.0, path.length, 97):
        x, y = path.point_at(s)
        s2, d = frenet_project(path, (x, y))
        assert np.hypot(*(np.array(path.reconstruct(s2, d)) - (x, y))) < 1e-6


def test_degenerate_paths_rejected():
    with pytest.raises(InvalidPathError):
        RefPath([[0, 0]])
    with pytest.raises(InvalidPathError):
        RefPath([[0, 0], [0, 0]])
    with pytest.raises(InvalidPathError):
        frenet_project([[0, 0], [1, 0]], (0, 0))


def test_crosswalk_conflict_cases():
    path = RefPath([[0, 0], [60, 0]])
    # rectangle centred at s = 30 with half-width 2 along the path
    assert crosswalk_conflict(path, Crosswalk("c", 28, -3, 32, 3)) == pytest.approx(28.0, abs=1e-6)
    assert crosswalk_conflict(path, Crosswalk("c", 28, 5, 32, 9)) is None
    assert crosswalk_conflict(path, Crosswalk("c", -1, -1, 1, 1)) == pytest.approx(0.0)


def _segment_crossings(pa, pb):
    # brute force: count proper crossings of every segment pair
    n = 0
    A, B = pa.waypoints, pb.waypoints
    for i in range(len(A) - 1):
        for j in range(len(B) - 1):
            p, r = A[i], A[i + 1] - A[i]
            q, s = B[j], B[j + 1] - B[j]
            den = r[0] * s[1] - r[1] * s[0]
            if abs(den) < 1e-12:
                continue
            t = ((q - p)[0] * s[1] - (q - p)[1] * s[0]) / den
            u = ((q - p)[0] * r[1] - (q - p)[1] * r[0]) / den
            if 0 <= t < 1 and 0 <= u < 1:
                n += 1
    return n


def test_conflicts_match_segment_oracle_and_coincide():
    m = default_map()
    paths = m.vehicle_paths
    names = sorted(paths)
    expected = sum(_segment_crossings(paths[a], paths[b]) for i, a in enumerate(names) for b in names[i + 1:])
    assert len(m.conflicts) == expected
    for cp in m.conflicts:
        pa = np.array(paths[cp.path_a].point_at(cp.s_a))
        pb = np.array(paths[cp.path_b].point_at(cp.s_b))
        assert np.hypot(*(pa - pb)) < 0.1


def test_ego_turn_crosses_both_horizontal_lanes():
    m = default_map()
    for lane in ("east", "west"):
        assert any({cp.path_a, cp.path_b} == {lane, "ego"} for cp in m.conflicts)


def test_parallel_lanes_have_no_conflict():
    cfg = default_map_config()
    cfg["lanes"] = [
        {"name": "a", "tag": "horizontal-east", "waypoints": [[-45, -1], [45, -1]]},
        {"name": "b", "tag": "horizontal-east", "waypoints": [[-45, -6], [45, -6]]},
    ]
    m = build_map(cfg)
    assert [c for c in m.conflicts if {c.path_a, c.path_b} == {"a", "b"}] == []


def test_conflicts_independent_of_lane_order():
    cfg = default_map_config()
    m1 = build_map(cfg)
    cfg["lanes"] = cfg["lanes"][::-1]
    m2 = build_map(cfg)
    key = lambda m: sorted((tuple(sorted((c.path_a, c.path_b))), round(c.s_a + c.s_b, 6)) for c in m.conflicts)
    assert key(m1) == key(m2)
    assert len(find_conflicts(m1)) == len(m1.conflicts)


def test_map_invariants():
    m = default_map()
    ego = m.ego_turn_path
    assert tuple(ego.waypoints[0]) == tuple(m.lanes["north"].path.waypoints[0])
    assert abs(ego.waypoints[-1][1] - m.lanes["west"].path.waypoints[0][1]) < 1e-9
    assert ego.length == pytest.approx(46.3, abs=0.05)
    for c in m.crosswalks:
        assert any(crosswalk_conflict(lane.path, c) is not None for lane in m.lanes.values())
