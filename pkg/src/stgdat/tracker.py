"""Recursive Bayesian tracking with linear baselines or the learned predictor as process model."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import synth
from .data_io import AgentTrajectory, SceneSample
from .decoder import VEHICLE
from .kinematics import GaussianBelief, propagate_gaussian, symmetrize_psd, wrap_angle
from .model import collate, prepare

MODES = ("cvm", "cam", "model")


@dataclass(frozen=True)
class TrackerConfig:
    """Noise levels; standard deviations in metres, metres/second and so on."""

    dt: float = 0.5
    meas_std: float = 0.02
    # process noise scaled per mode so the mean normalized innovation squared
    # is about 2 (a consistent 2-D filter) on held-out intersection streams
    q_pos: float = 0.015
    q_vel: float = 0.75
    q_acc: float = 1.5
    q_model: tuple = (0.06, 0.06, 0.12, 1.2, 0.12)
    init_vel_std: float = 1.0
    slip_std: float = 0.05

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.meas_std < 0:
            raise ValueError("meas_std must be non-negative")
        if len(self.q_model) != 5:
            raise ValueError("q_model needs five standard deviations")
        if not self.slip_std > 0:
            raise ValueError("slip_std must be positive")

    @property
    def R(self):
        return np.eye(2) * self.meas_std**2

    def Q(self, mode):
        if mode == "cvm":
            return np.diag(np.square([self.q_pos, self.q_pos, self.q_vel, self.q_vel]))
        if mode == "cam":
            return np.diag(np.square([self.q_pos, self.q_pos, self.q_vel, self.q_vel, self.q_acc, self.q_acc]))
        if mode == "model":
            return np.diag(np.square(self.q_model))
        raise ValueError(f"unknown process mode {mode!r}")


@dataclass
class Track:
    track_id: int
    agent_type: str
    belief: GaussianBelief
    since_measurement: int = 0


def linear_transition(mode, dt):
    """State transition of the constant-velocity / constant-acceleration models."""
    I2 = np.eye(2)
    if mode == "cvm":
        return np.block([[I2, dt * I2], [np.zeros((2, 2)), I2]])
    if mode == "cam":
        Z = np.zeros((2, 2))
        return np.block([[I2, dt * I2, 0.5 * dt * dt * I2], [Z, I2, dt * I2], [Z, Z, I2]])
    raise ValueError(f"no linear transition for mode {mode!r}")


def position_velocity(belief, mode):
    """(x, y) and velocity vector of a belief mean."""
    m = belief.mean
    if mode == "model":
        return m[:2], m[3] * np.array([np.cos(m[2] + m[4]), np.sin(m[2] + m[4])])
    return m[:2], m[2:4]


def prior_update(tracks, mode, config, controls=None):
    """Predict every track one step ahead.

    In ``model`` mode ``controls`` maps track id to ``(mu_u, sigma_uu)`` from
    the learned decoder; tracks without an entry coast with zero control.
    """
    if mode not in MODES:
        raise ValueError(f"unknown process mode {mode!r}")
    Q = config.Q(mode)
    out = []
    for tr in tracks:
        b = tr.belief
        if mode == "model":
            if controls is None:
                raise ValueError("model mode needs decoder controls (load a checkpoint)")
            mu_u, sigma_uu = controls.get(tr.track_id, (np.zeros(2), np.zeros((2, 2))))
            slip = getattr(controls, "slip", {}).get(tr.track_id)
            if slip is not None:
                b = slip_update(b, slip, config.slip_std)
            nb = propagate_gaussian(b, mu_u, sigma_uu, _bicycle(config, controls))
            nb = GaussianBelief(nb.mean, symmetrize_psd(nb.cov + Q))
            nb.mean[2] = wrap_angle(nb.mean[2])
        else:
            F = linear_transition(mode, config.dt)
            nb = GaussianBelief(F @ b.mean, symmetrize_psd(F @ b.cov @ F.T + Q))
        out.append(Track(tr.track_id, tr.agent_type, nb, tr.since_measurement + 1))
    return out


def _bicycle(config, controls):
    params = getattr(controls, "params", None)
    if params is None:
        raise ValueError("decoder controls must carry bicycle parameters")
    return params


class Controls(dict):
    """Track id -> (mu_u, sigma_uu), tagged with the bicycle parameters used to produce them."""

    def __init__(self, params, items=(), slip=None):
        super().__init__(items)
        self.params = params
        self.slip = dict(slip or {})  # track id -> slip angle the decoder started from


def _linear_update(belief, H, z, R):
    """Joseph-form Kalman update of ``belief`` with ``z ~ N(H x, R)``."""
    n = len(belief.mean)
    S = H @ belief.cov @ H.T + R
    if abs(np.linalg.det(S)) < 1e-300 or np.linalg.cond(S) > 1e14:
        raise np.linalg.LinAlgError("singular innovation covariance")
    K = np.linalg.solve(S, H @ belief.cov).T
    mean = belief.mean + K @ (z - H @ belief.mean)
    A = np.eye(n) - K @ H
    cov = A @ belief.cov @ A.T + K @ R @ K.T
    if n == 5:
        mean[2] = wrap_angle(mean[2])
    return GaussianBelief(mean, symmetrize_psd(cov))


def measurement_update(track, z, R):
    """Kalman update on the position components."""
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("measurement must be finite")
    H = np.zeros((2, len(track.belief.mean)))
    H[0, 0] = H[1, 1] = 1.0
    return Track(track.track_id, track.agent_type, _linear_update(track.belief, H, z, R), 0)


def slip_update(belief, beta, std):
    """Pseudo-measurement of the slip angle (state index 4).

    Positions barely constrain slip, so without this the filter's value
    random-walks away from the one the decoder's controls were computed for.
    """
    H = np.zeros((1, 5))
    H[0, 4] = 1.0
    return _linear_update(belief, H, np.array([beta]), np.array([[std * std]]))


def init_track(track_id, agent_type, z0, z1, mode, config):
    """Start a track from two consecutive measurements."""
    z0, z1 = np.asarray(z0, dtype=np.float64), np.asarray(z1, dtype=np.float64)
    vel = (z1 - z0) / config.dt
    r2 = config.meas_std**2
    pv = 2.0 * r2 / config.dt**2 + config.init_vel_std**2
    if mode == "model":
        speed = float(np.hypot(*vel))
        psi = float(np.arctan2(vel[1], vel[0])) if speed > 1e-9 else 0.0
        mean = np.array([z1[0], z1[1], psi, speed, 0.0])
        cov = np.diag([r2, r2, pv / max(speed, 1.0) ** 2, pv, 0.01])
    elif mode == "cvm":
        mean = np.concatenate([z1, vel])
        cov = np.diag([r2, r2, pv, pv])
    else:
        mean = np.concatenate([z1, vel, np.zeros(2)])
        cov = np.diag([r2, r2, pv, pv, config.q_acc**2, config.q_acc**2])
    return Track(track_id, agent_type, GaussianBelief(mean, cov))


def decoder_controls(model, tracks, window, maps=None, scene_id="scene"):
    """First-step decoder controls for vehicle tracks given a window of filtered states.

    ``window`` is a list (oldest first) of per-track ``(x, y, v, psi)`` arrays
    covering ``T_h`` steps.
    """
    cfg = model.config
    params = cfg.bicycle
    if len(window) < cfg.T_h:
        return Controls(params)
    hist = np.stack(window[-cfg.T_h :], axis=1)
    t = np.arange(cfg.T_h) * cfg.dt
    trajs = [AgentTrajectory(tr.track_id, tr.agent_type, t, hist[i, :, 0], hist[i, :, 1], hist[i, :, 2],
                             hist[i, :, 3]) for i, tr in enumerate(tracks)]
    sample = SceneSample(trajs, scene_id)
    cmap = (maps or {}).get(sample.scene_id)
    batch = collate([prepare(sample, cfg, cmap, with_future=False)])
    out = model.predict(batch)
    ctrl = Controls(params)
    for i, tr in enumerate(tracks):
        if out.kinematic[i] and batch.types[i] == VEHICLE:
            ctrl[tr.track_id] = (out.controls[i, 0].copy(), np.diag(np.square(out.control_std[i, 0])))
            ctrl.slip[tr.track_id] = float(out.states[i, 0, 4])
    return ctrl


def _filtered_state(track, mode):
    pos, vel = position_velocity(track.belief, mode)
    if mode == "model":
        m = track.belief.mean
        return np.array([pos[0], pos[1], m[3], m[2]])
    return np.array([pos[0], pos[1], np.hypot(*vel), np.arctan2(vel[1], vel[0])])


def run_tracking(truth_xy, truth_vel, measurements, occluded, mode, config, model=None, maps=None, scene_id=None,
                 agent_types=None):
    """Filter one scene and score it against the truth.

    ``truth_xy``/``truth_vel``/``measurements`` are (n, T, 2); ``occluded`` is a
    (T,) mask of steps without measurements. Tracks start from the first two
    measurements; scoring covers steps 2..T-1. Returns per-step squared
    errors plus the RMSE summary.
    """
    truth_xy = np.asarray(truth_xy, dtype=np.float64)
    measurements = np.asarray(measurements, dtype=np.float64)
    n, T = truth_xy.shape[:2]
    occluded = np.asarray(occluded, dtype=bool)
    if occluded[:2].any():
        raise ValueError("the first two steps initialize tracks and cannot be occluded")
    if mode == "model" and model is None:
        raise ValueError("model mode needs a checkpoint")
    types = agent_types or ["vehicle"] * n
    tracks = [init_track(i, types[i], measurements[i, 0], measurements[i, 1], mode, config) for i in range(n)]
    window = []
    if mode == "model":
        # the two initial measurements seed the history window
        first = np.array([[measurements[i, 0, 0], measurements[i, 0, 1], tr.belief.mean[3], tr.belief.mean[2]]
                          for i, tr in enumerate(tracks)])
        window = [first, np.stack([_filtered_state(tr, mode) for tr in tracks])]
    R = config.R
    pos_sq, vel_sq = [], []
    for k in range(2, T):
        controls = decoder_controls(model, tracks, window, maps, scene_id or "scene") if mode == "model" else None
        tracks = prior_update(tracks, mode, config, controls)
        if not occluded[k]:
            tracks = [measurement_update(tr, measurements[i, k], R) for i, tr in enumerate(tracks)]
        pv = [position_velocity(tr.belief, mode) for tr in tracks]
        pos_sq.append([float(np.sum((p - truth_xy[i, k]) ** 2)) for i, (p, _) in enumerate(pv)])
        vel_sq.append([float(np.sum((v - truth_vel[i, k]) ** 2)) for i, (_, v) in enumerate(pv)])
        if mode == "model":
            window.append(np.stack([_filtered_state(tr, mode) for tr in tracks]))
    pos_sq = np.asarray(pos_sq)
    vel_sq = np.asarray(vel_sq)
    return {
        "mode": mode,
        "position_rmse": float(np.sqrt(pos_sq.mean())),
        "velocity_rmse": float(np.sqrt(vel_sq.mean())),
        "position_mse_per_step": pos_sq.mean(axis=1).tolist(),
        "velocity_mse_per_step": vel_sq.mean(axis=1).tolist(),
        "n_targets": n,
        "n_steps": T - 2,
    }


def aggregate(reports):
    """Pool per-scene reports into one RMSE per quantity (weighted by target-steps)."""
    if not reports:
        raise ValueError("no reports to aggregate")
    w = np.array([r["n_targets"] * r["n_steps"] for r in reports], dtype=np.float64)
    pos = np.array([r["position_rmse"] ** 2 for r in reports])
    vel = np.array([r["velocity_rmse"] ** 2 for r in reports])
    return {"mode": reports[0]["mode"], "position_rmse": float(np.sqrt((w * pos).sum() / w.sum())),
            "velocity_rmse": float(np.sqrt((w * vel).sum() / w.sum())), "n_scenes": len(reports)}


def tracking_report(per_mode, config):
    return json.dumps({"config": asdict(config), "modes": per_mode}, sort_keys=True)


def simulate_measurements(truth_xy, meas_std, rng):
    return truth_xy + rng.normal(0.0, meas_std, size=truth_xy.shape)


def truth_velocity(true_states):
    """(n, T, 5) bicycle states -> (n, T, 2) velocity vectors."""
    s = np.asarray(true_states, dtype=np.float64)
    gam = s[..., 2] + s[..., 4]
    return np.stack([s[..., 3] * np.cos(gam), s[..., 3] * np.sin(gam)], axis=-1)


@dataclass
class TrackingStream:
    scene_id: str
    truth_xy: np.ndarray
    truth_vel: np.ndarray
    agent_types: list


def synthetic_streams(archetype, n_scenes, steps, dt, seed, agents=(2, 4), warmup=(0, 6)):
    """Noise-free synthetic scenes with true velocity vectors for scoring."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_scenes):
        n = int(rng.integers(agents[0], agents[1] + 1))
        skip = int(rng.integers(warmup[0], warmup[1] + 1))
        spec = synth.ScenarioSpec(archetype=archetype, n_agents=n, duration_steps=steps + skip, dt=dt,
                                  noise_std=0.0, seed=int(rng.integers(2**31)))
        trajs, geo = synth.generate(spec)
        states = np.asarray(geo["true_states"])[:, skip:]
        out.append(TrackingStream(archetype, states[..., :2], truth_velocity(states),
                                  [tr.agent_type for tr in trajs]))
    return out


def track_streams(streams, mode, config, rng, occluded, model=None, maps=None):
    """Simulate measurements for every stream and filter it -> list of reports."""
    reports = []
    for s in streams:
        meas = simulate_measurements(s.truth_xy, config.meas_std, rng)
        reports.append(run_tracking(s.truth_xy, s.truth_vel, meas, occluded, mode, config, model, maps, s.scene_id,
                                    s.agent_types))
    return reports
