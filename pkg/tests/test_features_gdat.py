import json

import numpy as np
import pytest

from conftest import random_scene
from stgdat.features import EDGE_DIM, NODE_DIM, SE_DIM, FeatureExtractor, state_inputs
from stgdat.gdat import (GDAT, EdgeUpdate, NodeGraph, TemporalAttention, TopologicalAttention, attention_dump,
                         topological_coefficients, uniform_coefficients)
from stgdat.model import Model, ModelConfig, collate, prepare
from stgdat.nn import ParamStore, grad_check
from stgdat.nn import tensor as tt


def _jitter(store, rng, scale=0.05):
    for name, p in store.items():
        if name.endswith(".b"):
            p.data = rng.normal(0.0, scale, p.shape)


@pytest.fixture
def fe():
    store = ParamStore()
    f = FeatureExtractor(store, np.random.default_rng(0))
    f.build_context_head((8, 8))
    return store, f


# -- feature extractor ---------------------------------------------------------
def test_state_inputs_layout():
    x = state_inputs(np.array([[12.0, -3.0, 5.0, np.pi / 2]]), np.array([[2.0, 7.0]]))
    np.testing.assert_allclose(x, [[1.0, -1.0, 0.5, 0.0, 1.0]], atol=1e-15)


def test_same_type_shares_weights(fe):
    _, f = fe
    x = np.tile(np.random.default_rng(1).normal(size=(1, 5)), (2, 1))
    out = f.embed_states(x, [1, 1]).data
    np.testing.assert_array_equal(out[0], out[1])


def test_different_types_differ(fe):
    _, f = fe
    x = np.tile(np.random.default_rng(1).normal(size=(1, 5)), (3, 1))
    out = f.embed_states(x, [0, 1, 2]).data
    assert not np.allclose(out[0], out[1]) and not np.allclose(out[1], out[2])


def test_embed_states_preserves_row_order(fe):
    _, f = fe
    x = np.random.default_rng(2).normal(size=(5, 5))
    types = np.array([2, 0, 1, 0, 2])
    out = f.embed_states(x, types).data
    for i, t in enumerate(types):
        ref = f.embed_state(x[i:i + 1], ("vehicle", "pedestrian", "cyclist")[t]).data[0]
        np.testing.assert_allclose(out[i], ref, rtol=0, atol=1e-13)
    assert out.shape == (5, SE_DIM)


def test_unknown_type_rejected(fe):
    _, f = fe
    with pytest.raises(ValueError, match="unknown agent type"):
        f.embed_state(np.zeros((1, 5)), "tram")


def test_identical_relations_identical_embeddings(fe):
    _, f = fe
    r = np.tile(np.random.default_rng(3).normal(size=(1, 5)), (3, 1))
    out = f.embed_relation(r).data
    assert out.shape == (3, EDGE_DIM)
    np.testing.assert_array_equal(out[0], out[2])


def test_zero_crop_is_bias_pathway(fe):
    store, f = fe
    out = f.embed_context(np.zeros((2, 8, 8, 3))).data
    # with zero input every conv output is its (activated) bias broadcast over space
    h = np.zeros((1, 1, 1, 3))
    sizes = [4, 2, 1]
    for conv, s in zip(f.convs, sizes):
        b = conv.b.data
        act = np.where(b > 0, b, 0.2 * b)
        h = np.broadcast_to(act, (1, s, s, len(b)))
    expected = h.reshape(1, -1) @ f.context_out.w.data + f.context_out.b.data
    np.testing.assert_allclose(out, np.vstack([expected, expected]), atol=1e-15)


def test_identical_crops_identical_embeddings(fe):
    _, f = fe
    crop = np.random.default_rng(4).normal(size=(1, 8, 8, 3))
    out = f.embed_context(np.concatenate([crop, crop])).data
    np.testing.assert_array_equal(out[0], out[1])


def test_context_shape_checks(fe):
    _, f = fe
    with pytest.raises(ValueError, match="context crops"):
        f.embed_context(np.zeros((2, 8, 8)))
    with pytest.raises(ValueError, match="crop size changed"):
        f.embed_context(np.zeros((1, 16, 16, 3)))


@pytest.mark.parametrize("part", ["state", "relation", "context"])
def test_feature_gradients(part):
    rng = np.random.default_rng(5)
    store = ParamStore()
    f = FeatureExtractor(store, rng)
    f.build_context_head((8, 8))
    _jitter(store, rng)
    if part == "state":
        x, types = rng.normal(size=(4, 5)), np.array([0, 1, 2, 0])
        fn = lambda: f.embed_states(x, types)  # noqa: E731
        names = [n for n in store.names() if n.startswith("fe.state")]
    elif part == "relation":
        x = rng.normal(size=(4, 5))
        fn = lambda: f.embed_relation(x)  # noqa: E731
        names = [n for n in store.names() if n.startswith("fe.relation")]
    else:
        x = rng.normal(size=(2, 8, 8, 3))
        fn = lambda: f.embed_context(x)  # noqa: E731
        names = [n for n in store.names() if n.startswith("fe.cnn")]
    target = rng.normal(size=fn().shape)

    def loss():
        d = fn() - target
        return tt.tsum(d * d)

    report = grad_check(loss, store, h=(1e-5, 1e-7), coarse_h=1e-3, names=names, max_entries=8,
                        rng=np.random.default_rng(0))
    assert max(report.values()) < 1e-4


# -- topological attention --------------------------------------------------------
def test_isolated_node_attends_to_itself():
    g = NodeGraph(1, np.zeros(0, dtype=np.intp), np.zeros(0, dtype=np.intp))
    a = topological_coefficients(tt.Tensor(np.ones((1, 3))), tt.Tensor(np.zeros(0)), g, tt.Tensor(np.ones(2)),
                                 tt.Tensor(np.ones(2)))
    np.testing.assert_array_equal(a.data, np.ones((1, 2)))


def test_symmetric_neighbourhood_is_uniform():
    g = NodeGraph(3, np.array([0, 0]), np.array([1, 2]))
    a = topological_coefficients(tt.Tensor(np.ones((3, 4))), tt.Tensor(np.zeros(2)), g, tt.Tensor(np.ones(1)),
                                 tt.Tensor(np.ones(1)))
    src, _ = g.with_self()
    np.testing.assert_allclose(a.data[src == 0, 0], 1 / 3, atol=1e-15)


def test_scalar_attribute_softmax_value():
    g = NodeGraph(2, np.array([0]), np.array([1]))
    a = topological_coefficients(tt.Tensor(np.array([[0.0], [2.0]])), tt.Tensor(np.zeros(1)), g,
                                 tt.Tensor(np.ones(1)), tt.Tensor(np.zeros(1)))
    src, dst = g.with_self()
    self_w = a.data[(src == 0) & (dst == 0), 0][0]
    nbr_w = a.data[(src == 0) & (dst == 1), 0][0]
    assert self_w == pytest.approx(1.0 / (1.0 + np.exp(-4.0)), abs=1e-15)
    assert nbr_w == pytest.approx(0.01799, abs=1e-5)


def test_uniform_coefficients_are_inverse_degree():
    g = NodeGraph(3, np.array([0, 0, 1]), np.array([1, 2, 0]))
    a = uniform_coefficients(g, 2).data
    src, _ = g.with_self()
    np.testing.assert_allclose(a[:, 0], 1.0 / np.array([3, 2, 1])[src])


def test_identical_edge_tuples_identical_updates():
    rng = np.random.default_rng(0)
    store = ParamStore()
    eu = EdgeUpdate(store, "e", 4, 3, rng)
    v = tt.Tensor(np.vstack([np.ones(4), np.ones(4), np.zeros(4)]))
    g = NodeGraph(3, np.array([0, 1]), np.array([2, 2]))
    out = eu(v, tt.Tensor(np.ones((2, 3))), g).data
    np.testing.assert_array_equal(out[0], out[1])


def _random_graph(rng, n):
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j and rng.random() < 0.4]
    src = np.array([p[0] for p in pairs], dtype=np.intp)
    dst = np.array([p[1] for p in pairs], dtype=np.intp)
    return NodeGraph(n, src, dst)


@pytest.mark.parametrize("module", ["topological", "edge", "temporal"])
def test_attention_module_gradients(module):
    rng = np.random.default_rng(7)
    store = ParamStore()
    g = _random_graph(rng, 5)
    v = rng.normal(size=(5, 6))
    e = rng.normal(size=(len(g.src), 3))
    if module == "topological":
        m = TopologicalAttention(store, "t", 6, rng, n_heads=2)
        fn = lambda: m(tt.Tensor(v), tt.Tensor(e), g)  # noqa: E731
    elif module == "edge":
        m = EdgeUpdate(store, "e", 6, 3, rng, hidden=8)
        fn = lambda: m(tt.Tensor(v), tt.Tensor(e), g)  # noqa: E731
    else:
        m = TemporalAttention(store, "w", 6, rng, n_heads=2, head_dim=3)
        seq = rng.normal(size=(2, 4, 6))
        fn = lambda: m(tt.Tensor(seq))  # noqa: E731
    _jitter(store, rng)
    target = rng.normal(size=fn().shape)

    def loss():
        d = fn() - target
        return tt.tsum(d * d)

    report = grad_check(loss, store, h=(1e-5, 1e-7), coarse_h=1e-3)
    assert max(report.values()) < 1e-4


# -- temporal attention -----------------------------------------------------------
def test_temporal_equal_scores_uniform():
    store = ParamStore()
    ta = TemporalAttention(store, "t", 4, np.random.default_rng(0))
    seq = np.tile(np.random.default_rng(1).normal(size=(1, 1, 4)), (2, 5, 1))
    beta = ta.coefficients(tt.Tensor(seq)).data
    np.testing.assert_allclose(beta, 0.2, atol=1e-15)


def test_temporal_single_step():
    store = ParamStore()
    ta = TemporalAttention(store, "t", 4, np.random.default_rng(0), n_heads=2, head_dim=3)
    seq = np.random.default_rng(1).normal(size=(3, 1, 4))
    np.testing.assert_array_equal(ta.coefficients(tt.Tensor(seq)).data, np.ones((3, 1, 2)))
    out = ta(tt.Tensor(seq)).data
    vals = seq[:, 0] @ ta.value.data
    np.testing.assert_allclose(out, np.where(vals > 0, vals, 0.2 * vals), atol=1e-15)


def test_temporal_normalization_random():
    rng = np.random.default_rng(2)
    store = ParamStore()
    ta = TemporalAttention(store, "t", 8, rng)
    for _ in range(50):
        seq = rng.normal(0, 5, size=(3, int(rng.integers(1, 12)), 8))
        beta = ta.coefficients(tt.Tensor(seq)).data
        assert np.abs(beta.sum(axis=1) - 1.0).max() <= 1e-12


# -- GDAT block -------------------------------------------------------------------
def test_single_round_has_no_edge_update():
    store = ParamStore()
    gd = GDAT(store, np.random.default_rng(0), node_dim=8, edge_dim=4, rounds=1)
    assert gd.edges == [] and not any(".edge." in n for n in store.names())
    with pytest.raises(ValueError):
        GDAT(ParamStore(), np.random.default_rng(0), rounds=0)


def test_single_agent_ignores_threshold():
    rng = np.random.default_rng(3)
    scene = random_scene(rng, 1, 8, types=["vehicle"])
    outs = []
    for d in (1.0, 30.0, 1e4):
        cfg = ModelConfig(T_h=4, T_f=4, dt=0.5, edge_distance=d)
        m = Model(cfg, seed=0)
        outs.append(m.summaries(collate([prepare(scene, cfg, None, with_future=True)]))[0].data)
    np.testing.assert_array_equal(outs[0], outs[1])
    np.testing.assert_array_equal(outs[0], outs[2])


def test_attention_dump_rows():
    rng = np.random.default_rng(4)
    scene = random_scene(rng, 3, 4, spread=3.0)
    cfg = ModelConfig(T_h=4, T_f=2, dt=0.5)
    m = Model(cfg, seed=0)
    batch = collate([prepare(scene, cfg, None, with_future=False)])
    record = {}
    m.predict(batch, record=record)
    rows = json.loads(attention_dump(record, batch.graph, batch.n, scene.agent_ids()))
    topo = [r for r in rows if r["kind"] == "topological"]
    temp = [r for r in rows if r["kind"] == "temporal"]
    assert len(topo) == 2 * 12 * 4 and len(temp) == 3 * 4
    assert all(abs(sum(r["coefficients"]) - 1.0) < 1e-12 for r in rows)
    assert all(r["neighbors"][0] == r["agent"] for r in topo)
    assert NODE_DIM == 64
