import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import line_traj, random_scene
from stgdat.data_io import SceneSample
from stgdat.scene_graph import GraphConfig, build_graphs, relation_feature


def _pair(dist):
    a = line_traj(0, "vehicle", (0.0, 0.0), (0.0, 0.0), 3, 0.5)
    b = line_traj(1, "vehicle", (dist, 0.0), (0.0, 0.0), 3, 0.5)
    return SceneSample([a, b])


def test_far_pair_has_no_edge():
    hg, _ = build_graphs(_pair(12.0), GraphConfig(d=10.0), 3)
    assert all(hg.n_edges(k) == 0 for k in range(3))


def test_boundary_distance_is_an_edge():
    hg, _ = build_graphs(_pair(10.0), GraphConfig(d=10.0), 3)
    assert all(hg.n_edges(k) == 2 for k in range(3))


def test_close_triple_is_complete_digraph():
    trajs = [line_traj(i, "pedestrian", (i, 0.0), (1.0, 0.0), 4, 0.5) for i in range(3)]
    hg, fg = build_graphs(SceneSample(trajs), GraphConfig(d=10.0), 2)
    assert [hg.n_edges(k) for k in range(2)] == [6, 6]
    assert [fg.n_edges(k) for k in range(2)] == [6, 6]
    assert hg.neighbors(0, 1) == [1, 0, 2]
    assert list(fg.steps) == [2, 3]


def test_no_future_graph_for_history_only():
    hg, fg = build_graphs(_pair(1.0), GraphConfig(), 3)
    assert fg is None and len(hg.steps) == 3


def test_relation_axis_aligned():
    np.testing.assert_allclose(relation_feature([0, 0, 0, 0], [3, 4, 0, 0])[:2], [3.0, 4.0])


def test_relation_rotated_frame():
    np.testing.assert_allclose(relation_feature([0, 0, 0, np.pi / 2], [0, 5, 0, 0])[:2], [5.0, 0.0], atol=1e-15)


def test_relation_velocity_and_heading_terms():
    f = relation_feature([0, 0, 2.0, 0.0], [1, 1, 3.0, np.pi / 2])
    np.testing.assert_allclose(f[2:], [-2.0, 3.0, np.pi / 2], atol=1e-15)


def test_relation_rigid_motion_invariance():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(200):
        si = np.array([*rng.normal(0, 20, 2), rng.uniform(0, 10), rng.uniform(-np.pi, np.pi)])
        sj = np.array([*rng.normal(0, 20, 2), rng.uniform(0, 10), rng.uniform(-np.pi, np.pi)])
        th, t = rng.uniform(-np.pi, np.pi), rng.normal(0, 50, 2)
        R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])

        def move(s):
            return np.array([*(R @ s[:2] + t), s[2], s[3] + th])

        a = relation_feature(si, sj)
        b = relation_feature(move(si), move(sj))
        d = np.abs(a - b)
        d[4] = min(d[4], 2 * np.pi - d[4])
        worst = max(worst, d.max())
    assert worst < 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.floats(1.0, 40.0), st.integers(0, 10_000))
def test_edges_symmetric_and_within_threshold(n, d, seed):
    scene = random_scene(np.random.default_rng(seed), n, 4)
    hg, _ = build_graphs(scene, GraphConfig(d=d), 4)
    for k in range(4):
        pairs = set(zip(hg.src[k].tolist(), hg.dst[k].tolist()))
        assert all((b, a) in pairs for a, b in pairs)
        assert all(a != b for a, b in pairs)
        pos = hg.states[:, k, :2]
        for a, b in pairs:
            assert np.linalg.norm(pos[a] - pos[b]) <= d


def test_graph_json_export():
    hg, _ = build_graphs(_pair(1.0), GraphConfig(), 2)
    doc = json.loads(hg.to_json())
    assert doc["n"] == 2 and doc["adjacency"][0]["edges"] == [[0, 1], [1, 0]]


def test_threshold_validation():
    with pytest.raises(ValueError):
        GraphConfig(d=0.0)
