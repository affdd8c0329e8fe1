"""Graph dual attention: per-step topological attention, edge updates, temporal attention."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .nn import MLP, Dense
from .nn import tensor as tt
from .nn.layers import LEAKY_SLOPE

N_HEADS = 4
HEAD_DIM = 16
SOFTPLUS_ONE = float(np.log(np.expm1(1.0)))


def f_act(x):
    return tt.leaky_relu(x, LEAKY_SLOPE)


@dataclass
class NodeGraph:
    """Flattened graph over ``n_nodes`` node-steps.

    ``src``/``dst`` hold directed non-self edges (``dst`` is a neighbour of
    ``src``; messages are aggregated at ``src``). Self edges are implicit.
    """

    n_nodes: int
    src: np.ndarray
    dst: np.ndarray

    def with_self(self):
        idx = np.arange(self.n_nodes)
        return np.concatenate([self.src, idx]), np.concatenate([self.dst, idx])

    def degree(self):
        return np.bincount(self.src, minlength=self.n_nodes) + 1


def topological_coefficients(v, edge_sq, graph, lam, mu):
    """Attention weights (E + n_nodes, H) for every edge including self loops.

    ``v`` (n_nodes, D) node attributes, ``edge_sq`` (E,) squared edge-attribute
    norms of the non-self edges, ``lam``/``mu`` (H,) positive head scales.
    """
    src, dst = graph.with_self()
    diff = tt.gather_rows(v, src) - tt.gather_rows(v, dst)
    d_v = tt.tsum(diff * diff, axis=1, keepdims=True)
    d_e = tt.concat([edge_sq, tt.Tensor(np.zeros(graph.n_nodes))], axis=0)
    d_e = tt.reshape(d_e, (-1, 1))
    lam = tt.reshape(lam, (1, -1))
    mu = tt.reshape(mu, (1, -1))
    scores = -(d_v * lam + d_e * mu)
    return tt.segment_softmax(scores, src, graph.n_nodes)


def uniform_coefficients(graph, n_heads=N_HEADS):
    src, _ = graph.with_self()
    w = 1.0 / graph.degree()[src]
    return tt.Tensor(np.repeat(w[:, None], n_heads, axis=1))


class TopologicalAttention:
    """One message-passing round: shared ``W_n``, per-head ``lambda``/``mu``, concat + projection."""

    def __init__(self, store, name, dim, rng, n_heads=N_HEADS):
        self.n_heads = n_heads
        self.w = store.glorot(f"{name}.w_n", (dim, dim), rng)
        self.lam_raw = store.add(f"{name}.lambda", np.full(n_heads, SOFTPLUS_ONE))
        self.mu_raw = store.add(f"{name}.mu", np.full(n_heads, SOFTPLUS_ONE))
        self.proj = Dense(store, f"{name}.proj", n_heads * dim, dim, rng)

    def coefficients(self, v, edge_attr, graph, uniform=False):
        if uniform:
            return uniform_coefficients(graph, self.n_heads)
        edge_sq = tt.tsum(edge_attr * edge_attr, axis=1) if graph.src.size else tt.Tensor(np.zeros(0))
        return topological_coefficients(v, edge_sq, graph, tt.softplus(self.lam_raw), tt.softplus(self.mu_raw))

    def __call__(self, v, edge_attr, graph, uniform=False, record=None):
        alpha = self.coefficients(v, edge_attr, graph, uniform)
        if record is not None:
            record.append(alpha.data.copy())
        src, dst = graph.with_self()
        wv = tt.matmul(v, self.w)
        msg = tt.gather_rows(wv, dst)
        E, D = msg.shape
        msg = tt.reshape(msg, (E, 1, D)) * tt.reshape(alpha, (E, self.n_heads, 1))
        agg = tt.segment_sum(f_act(msg), src, graph.n_nodes)
        return self.proj(tt.reshape(agg, (graph.n_nodes, self.n_heads * D)))


class EdgeUpdate:
    def __init__(self, store, name, node_dim, edge_dim, rng, hidden=128):
        self.mlp = MLP(store, name, [2 * node_dim + edge_dim, hidden, edge_dim], rng)

    def __call__(self, v, edge_attr, graph):
        x = tt.concat([tt.gather_rows(v, graph.src), tt.gather_rows(v, graph.dst), edge_attr], axis=1)
        return self.mlp(x)


class TemporalAttention:
    """Per-head score vector ``w`` and per-head value projection to ``HEAD_DIM``."""

    def __init__(self, store, name, dim, rng, n_heads=N_HEADS, head_dim=HEAD_DIM):
        self.n_heads, self.head_dim = n_heads, head_dim
        self.w = store.glorot(f"{name}.w", (dim, n_heads), rng)
        self.value = store.glorot(f"{name}.value", (dim, n_heads * head_dim), rng, dim, head_dim)

    def coefficients(self, seq, uniform=False):
        """``seq`` (N, T, D) -> beta (N, T, H), normalized over T."""
        N, T, _ = seq.shape
        if uniform:
            return tt.Tensor(np.full((N, T, self.n_heads), 1.0 / T))
        return tt.softmax(f_act(tt.matmul(seq, self.w)), axis=1)

    def __call__(self, seq, uniform=False, record=None):
        N, T, _ = seq.shape
        beta = self.coefficients(seq, uniform)
        if record is not None:
            record.append(beta.data.copy())
        vals = tt.reshape(tt.matmul(seq, self.value), (N, T, self.n_heads, self.head_dim))
        weighted = f_act(vals * tt.reshape(beta, (N, T, self.n_heads, 1)))
        return tt.reshape(tt.tsum(weighted, axis=1), (N, self.n_heads * self.head_dim))


class GDAT:
    """``rounds`` topological rounds (edge updates in between), then temporal attention."""

    def __init__(self, store, rng, node_dim=64, edge_dim=16, rounds=2, n_heads=N_HEADS, prefix="gdat"):
        if rounds < 1:
            raise ValueError("rounds must be >= 1")
        self.rounds = rounds
        self.topo = [TopologicalAttention(store, f"{prefix}.topo.{r}", node_dim, rng, n_heads) for r in range(rounds)]
        self.edges = [EdgeUpdate(store, f"{prefix}.edge.{r}", node_dim, edge_dim, rng) for r in range(rounds - 1)]
        self.temporal = TemporalAttention(store, f"{prefix}.temporal", node_dim, rng, n_heads)

    def spatial(self, v, edge_attr, graph, uniform=False, record=None):
        for r in range(self.rounds):
            if r > 0:
                edge_attr = self.edges[r - 1](v, edge_attr, graph) if graph.src.size else edge_attr
            v = self.topo[r](v, edge_attr, graph, uniform, record)
        return v

    def __call__(self, v, edge_attr, graph, n_agents, ranges, uniform=False, record=None):
        """Node-steps are laid out agent-major (``agent * T + k``).

        ``ranges`` lists ``(start, stop)`` step windows for temporal attention;
        returns one (n_agents, D) summary per window.
        """
        vbar = self.spatial(v, edge_attr, graph, uniform, None if record is None else record.setdefault("alpha", []))
        T = graph.n_nodes // n_agents
        seq = tt.reshape(vbar, (n_agents, T, vbar.shape[1]))
        outs = []
        for a, b in ranges:
            rec = None if record is None else record.setdefault("beta", [])
            outs.append(self.temporal(seq[:, a:b], uniform, rec))
        return outs


def attention_dump(record, graph, n_agents, agent_ids=None):
    """JSON text of ``{agent, step, head, coefficients}`` rows from a GDAT record."""
    T = graph.n_nodes // n_agents
    src, dst = graph.with_self()
    ids = list(range(n_agents)) if agent_ids is None else list(agent_ids)
    rows = []
    for rnd, alpha in enumerate(record.get("alpha", [])):
        for node in range(graph.n_nodes):
            sel = np.flatnonzero(src == node)
            sel = np.concatenate([sel[dst[sel] == node], sel[dst[sel] != node]])  # self first
            for h in range(alpha.shape[1]):
                rows.append({
                    "kind": "topological", "round": rnd, "agent": ids[node // T], "step": node % T, "head": h,
                    "neighbors": [ids[j // T] for j in dst[sel]],
                    "coefficients": [float(c) for c in alpha[sel, h]],
                })
    for win, beta in enumerate(record.get("beta", [])):
        for i in range(beta.shape[0]):
            for h in range(beta.shape[2]):
                rows.append({"kind": "temporal", "window": win, "agent": ids[i], "head": h,
                             "coefficients": [float(c) for c in beta[i, :, h]]})
    return json.dumps(rows)
