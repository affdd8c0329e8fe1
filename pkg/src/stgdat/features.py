"""State / relation / context embeddings assembled into node and edge attributes."""
from __future__ import annotations

import numpy as np

from .data_io import AGENT_TYPES
from .nn import MLP, Conv2d, Dense
from .nn import tensor as tt

STATE_IN = 5
SE_DIM = 32
CE_DIM = 32
NODE_DIM = SE_DIM + CE_DIM
EDGE_DIM = 16
HIDDEN = 128
CONTEXT_CHANNELS = 3
POS_SCALE = 10.0
SPEED_SCALE = 10.0


def state_inputs(states, center):
    """(..., 4) states (x, y, v, psi) -> (..., 5) network inputs around ``center``."""
    states = np.asarray(states, dtype=np.float64)
    return np.stack(
        [
            (states[..., 0] - center[..., 0]) / POS_SCALE,
            (states[..., 1] - center[..., 1]) / POS_SCALE,
            states[..., 2] / SPEED_SCALE,
            np.cos(states[..., 3]),
            np.sin(states[..., 3]),
        ],
        axis=-1,
    )


def relation_inputs(rel):
    rel = np.asarray(rel, dtype=np.float64)
    scale = np.array([POS_SCALE, POS_SCALE, SPEED_SCALE, SPEED_SCALE, 1.0])
    return rel / scale


class FeatureExtractor:
    """Per-type State MLPs, a shared Relation MLP and a small Context CNN."""

    def __init__(self, store, rng, prefix="fe"):
        self.state_mlps = {
            t: MLP(store, f"{prefix}.state.{t}", [STATE_IN, HIDDEN, HIDDEN, HIDDEN, SE_DIM], rng)
            for t in AGENT_TYPES
        }
        self.relation_mlp = MLP(store, f"{prefix}.relation", [5, HIDDEN, HIDDEN, HIDDEN, EDGE_DIM], rng)
        self.convs = [
            Conv2d(store, f"{prefix}.cnn.0", CONTEXT_CHANNELS, 16, rng),
            Conv2d(store, f"{prefix}.cnn.1", 16, 32, rng),
            Conv2d(store, f"{prefix}.cnn.2", 32, 32, rng),
        ]
        self.context_out = None
        self._store, self._prefix, self._rng = store, prefix, rng

    def embed_state(self, x, agent_type):
        """``x`` is (M, 5) state inputs for agents of one type -> (M, SE_DIM)."""
        if agent_type not in self.state_mlps:
            raise ValueError(f"unknown agent type {agent_type!r}")
        return self.state_mlps[agent_type](x)

    def embed_states(self, x, types):
        """Route rows of ``x`` (M, 5) through the MLP of their type, preserving row order."""
        types = np.asarray(types)
        parts, order = [], []
        for ti, name in enumerate(AGENT_TYPES):
            rows = np.flatnonzero(types == ti)
            if len(rows):
                parts.append(self.state_mlps[name](tt.gather_rows(x, rows)))
                order.append(rows)
        if not order:
            raise ValueError("no rows to embed")
        perm = np.concatenate(order)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        return tt.gather_rows(tt.concat(parts, axis=0), inv)

    def embed_relation(self, feats):
        """(E, 5) relation features -> (E, EDGE_DIM)."""
        return self.relation_mlp(feats)

    def embed_context(self, crops):
        """(M, H, W, 3) crops -> (M, CE_DIM)."""
        crops = tt.as_tensor(crops)
        if crops.ndim != 4 or crops.shape[-1] != CONTEXT_CHANNELS:
            raise ValueError(f"context crops must be (M, H, W, {CONTEXT_CHANNELS}), got {crops.shape}")
        h = crops
        for conv in self.convs:
            h = conv(h)
        flat = tt.reshape(h, (h.shape[0], -1))
        if self.context_out is None:
            self.context_out = Dense(self._store, f"{self._prefix}.cnn.out", flat.shape[1], CE_DIM, self._rng)
        elif self.context_out.w.shape[0] != flat.shape[1]:
            raise ValueError(f"crop size changed: flattened width {flat.shape[1]} vs {self.context_out.w.shape[0]}")
        return self.context_out(flat)

    def build_context_head(self, crop_hw):
        """Create the context projection eagerly so parameter order is fixed."""
        h, w = crop_hw
        for _ in self.convs:
            h, w = (h + 2 - 3) // 2 + 1, (w + 2 - 3) // 2 + 1
        self.context_out = Dense(self._store, f"{self._prefix}.cnn.out", h * w * 32, CE_DIM, self._rng)
