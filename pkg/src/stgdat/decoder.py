"""Per-type GRU decoder with a kinematic control layer for vehicles."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_io import AGENT_TYPES, TYPE_INDEX
from .features import POS_SCALE, SPEED_SCALE
from .kinematics import GaussianBelief, propagate_gaussian, propagate_monte_carlo, saturate
from .kinematics import bicycle_step_tensor
from .nn import Dense, GRUCell
from .nn import tensor as tt

GRU_HIDDEN = 128
GRU_INPUT = 4
STD_SCALE = 0.1
VEHICLE = TYPE_INDEX["vehicle"]


def gru_inputs(pos, prev, last, dt):
    """Decoder input for a position: offset from the last observation and the step velocity."""
    return np.concatenate([(pos - last) / POS_SCALE, (pos - prev) / (dt * SPEED_SCALE)], axis=-1)


def _gru_inputs_tensor(pos, prev, last, dt):
    return tt.concat([(pos - last) * (1.0 / POS_SCALE), (pos - prev) * (1.0 / (dt * SPEED_SCALE))], axis=1)


@dataclass
class DecodeOutput:
    """Rollout of a group of agents.

    ``positions`` (N, T_f, 2) tensor; for kinematic agents ``controls`` and
    ``control_std`` (N, T_f, 2) hold saturated means and standard deviations
    and ``states`` (N, T_f + 1, 5) the bicycle states. Rows of other agents are
    NaN in those arrays.
    """

    positions: tt.Tensor
    controls: np.ndarray
    control_std: np.ndarray
    states: np.ndarray
    kinematic: np.ndarray


class Decoder:
    """One GRU, hidden-state initializer and output head per agent type."""

    def __init__(self, store, rng, summary_dim=64, latent_dim=32, prefix="dec"):
        self.init = {}
        self.gru = {}
        self.head = {}
        for t in AGENT_TYPES:
            self.init[t] = Dense(store, f"{prefix}.{t}.init", summary_dim + latent_dim, GRU_HIDDEN, rng, "tanh")
            self.gru[t] = GRUCell(store, f"{prefix}.{t}.gru", GRU_INPUT, GRU_HIDDEN, rng)
            n_out = 4 if t == "vehicle" else 2
            self.head[t] = Dense(store, f"{prefix}.{t}.head", GRU_HIDDEN, n_out, rng)

    def _group(self, type_name, v_hist, z, hist_xy, s0, T_f, params, kinematic):
        M, T_h = hist_xy.shape[:2]
        dt = params.dt
        h = self.init[type_name](tt.concat([v_hist, z], axis=1))
        gru, head = self.gru[type_name], self.head[type_name]
        last = hist_xy[:, -1]
        # burn-in on the observed history
        for k in range(T_h):
            prev = hist_xy[:, max(k - 1, 0)]
            h = gru(h, gru_inputs(hist_xy[:, k], prev, last, dt))
        controls = np.full((M, T_f, 2), np.nan)
        stds = np.full((M, T_f, 2), np.nan)
        states = np.full((M, T_f + 1, 5), np.nan)
        if kinematic:
            state = [tt.Tensor(s0[:, i]) for i in range(5)]
            states[:, 0] = s0
        pos_prev = tt.Tensor(last)
        lastt = tt.Tensor(last)
        out = []
        disp_scale = dt * SPEED_SCALE
        for k in range(T_f):
            raw = head(h)
            if kinematic:
                u = saturate(raw[:, 0:2] * params.bounds, params)
                std = tt.softplus(raw[:, 2:4]) * (STD_SCALE * params.bounds)
                state = bicycle_step_tensor(state, [u[:, 0], u[:, 1]], params)
                pos = tt.stack([state[0], state[1]], axis=1)
                controls[:, k] = u.data
                stds[:, k] = std.data
                states[:, k + 1] = np.stack([s.data for s in state], axis=1)
            else:
                pos = pos_prev + raw[:, 0:2] * disp_scale
            out.append(pos)
            if k + 1 < T_f:
                h = gru(h, _gru_inputs_tensor(pos, pos_prev, lastt, dt))
            pos_prev = pos
        return tt.stack(out, axis=1), controls, stds, states

    def __call__(self, v_hist, z, hist_xy, s0, types, T_f, params, kinematic=True):
        """Decode every agent; ``kinematic`` routes vehicles through the bicycle layer.

        ``hist_xy`` (N, T_h, 2) observed positions, ``s0`` (N, 5) initial
        bicycle states (used for vehicles only), ``types`` (N,) type indices.
        """
        types = np.asarray(types)
        N = len(types)
        if np.any((types < 0) | (types >= len(AGENT_TYPES))):
            raise ValueError(f"unknown agent type index in {np.unique(types)}")
        parts, order = [], []
        controls = np.full((N, T_f, 2), np.nan)
        stds = np.full((N, T_f, 2), np.nan)
        states = np.full((N, T_f + 1, 5), np.nan)
        kin = np.zeros(N, dtype=bool)
        for ti, name in enumerate(AGENT_TYPES):
            rows = np.flatnonzero(types == ti)
            if not len(rows):
                continue
            use_kin = kinematic and ti == VEHICLE
            pos, c, s, st = self._group(name, tt.gather_rows(v_hist, rows), tt.gather_rows(z, rows),
                                        hist_xy[rows], s0[rows], T_f, params, use_kin)
            parts.append(pos)
            order.append(rows)
            controls[rows], stds[rows], states[rows] = c, s, st
            kin[rows] = use_kin
        perm = np.concatenate(order)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(N)
        positions = tt.gather_rows(tt.concat(parts, axis=0), inv)
        return DecodeOutput(positions, controls, stds, states, kin)


def gaussian_rollout(s0, controls, control_std, params, cov0=None):
    """Linearized propagation of one vehicle along decoded controls.

    Returns the list of ``T_f + 1`` beliefs starting at ``s0``.
    """
    belief = GaussianBelief(np.asarray(s0, dtype=np.float64), np.zeros((5, 5)) if cov0 is None else cov0)
    out = [belief]
    for u, sd in zip(controls, control_std):
        belief = propagate_gaussian(belief, u, np.diag(np.square(sd)), params)
        out.append(belief)
    return out


def monte_carlo_rollout(s0, controls, control_std, rng, params, n_particles=100, impl=None):
    """Particle rollout -> (n_particles, T_f + 1, 5)."""
    if n_particles < 1:
        raise ValueError("n_particles must be >= 1")
    p = np.repeat(np.asarray(s0, dtype=np.float64)[None], n_particles, axis=0)
    traj = [p]
    for u, sd in zip(controls, control_std):
        p = propagate_monte_carlo(p, u, np.diag(np.square(sd)), rng, params, impl=impl)
        traj.append(p)
    return np.stack(traj, axis=1)
