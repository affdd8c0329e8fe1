"""History / future spatio-temporal graphs with distance-thresholded edges."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .kinematics import wrap_angle

RELATION_DIM = 5


@dataclass(frozen=True)
class GraphConfig:
    d: float = 30.0
    include_self: bool = True

    def __post_init__(self):
        if not self.d > 0:
            raise ValueError("edge distance threshold d must be positive")


@dataclass
class SceneGraph:
    """Graph over a fixed node set for consecutive time steps.

    ``src[k]``/``dst[k]`` list the directed edges ``i -> j`` (``i != j``) at
    step ``k``; ``relations[k]`` holds their features in ``i``'s frame.
    """

    n: int
    steps: np.ndarray
    states: np.ndarray
    src: list
    dst: list
    relations: list

    def neighbors(self, k, i):
        """N(i) at local step ``k`` (self first)."""
        return [i] + [int(j) for j in self.dst[k][self.src[k] == i]]

    def n_edges(self, k):
        return len(self.src[k])

    def to_json(self):
        return json.dumps({
            "n": self.n,
            "steps": [int(s) for s in self.steps],
            "adjacency": [
                {"step": int(s), "edges": [[int(a), int(b)] for a, b in zip(self.src[k], self.dst[k])]}
                for k, s in enumerate(self.steps)
            ],
        })


def relation_feature(state_i, state_j):
    """Pose and velocity of ``j`` in the frame of ``i`` (origin at i, +x along i's heading).

    States are ``(x, y, v, psi)``; returns ``(dx, dy, dvx, dvy, dpsi)``.
    """
    si = np.asarray(state_i, dtype=np.float64)
    sj = np.asarray(state_j, dtype=np.float64)
    c, s = np.cos(si[..., 3]), np.sin(si[..., 3])
    dx = sj[..., 0] - si[..., 0]
    dy = sj[..., 1] - si[..., 1]
    vxi, vyi = si[..., 2] * c, si[..., 2] * s
    vxj, vyj = sj[..., 2] * np.cos(sj[..., 3]), sj[..., 2] * np.sin(sj[..., 3])
    dvx, dvy = vxj - vxi, vyj - vyi
    return np.stack(
        [c * dx + s * dy, -s * dx + c * dy, c * dvx + s * dvy, -s * dvx + c * dvy,
         wrap_angle(sj[..., 3] - si[..., 3])],
        axis=-1,
    )


def _graph(states, steps, config):
    n = states.shape[0]
    src, dst, rel = [], [], []
    ii, jj = np.where(~np.eye(n, dtype=bool))
    for k in range(states.shape[1]):
        pos = states[:, k, :2]
        dist = np.linalg.norm(pos[ii] - pos[jj], axis=-1)
        keep = dist <= config.d
        a, b = ii[keep], jj[keep]
        src.append(a)
        dst.append(b)
        rel.append(relation_feature(states[a, k], states[b, k]).reshape(-1, RELATION_DIM))
    return SceneGraph(n, np.asarray(steps), states, src, dst, rel)


def build_graphs(sample, config, T_h):
    """Split a sample's (n, T_h + T_f, 4) states into history and future graphs."""
    states = sample.states() if hasattr(sample, "states") else np.asarray(sample)
    T = states.shape[1]
    hg = _graph(states[:, :T_h], np.arange(T_h), config)
    fg = _graph(states[:, T_h:], np.arange(T_h, T), config) if T > T_h else None
    return hg, fg
