"""Trajectory CSV ingestion, windowing into samples, splits and ADE/FDE."""
from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .kinematics import wrap_angle

AGENT_TYPES = ("vehicle", "pedestrian", "cyclist")
TYPE_INDEX = {name: i for i, name in enumerate(AGENT_TYPES)}

REQUIRED_COLUMNS = ("frame_id", "agent_id", "agent_type", "x", "y")
CSV_COLUMNS = REQUIRED_COLUMNS + ("v", "psi")


class DataError(ValueError):
    pass


@dataclass
class AgentTrajectory:
    agent_id: int
    agent_type: str
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    v: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        if self.agent_type not in TYPE_INDEX:
            raise DataError(f"unknown agent_type {self.agent_type!r}")
        for name in ("t", "x", "y", "v", "psi"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))

    def __len__(self):
        return len(self.t)

    @property
    def xy(self):
        return np.stack([self.x, self.y], axis=-1)

    def states(self):
        """(T, 4) array of (x, y, v, psi)."""
        return np.stack([self.x, self.y, self.v, self.psi], axis=-1)


@dataclass(frozen=True)
class HorizonConfig:
    T_h: int = 8
    T_f: int = 12
    dt: float = 0.4

    def __post_init__(self):
        if self.T_h < 1 or self.T_f < 1:
            raise ValueError("T_h and T_f must be >= 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    @property
    def total(self):
        return self.T_h + self.T_f


@dataclass
class SceneSample:
    """Agents present over one full history+future window.

    ``scene_id`` keys the context map (a location); ``recording_id`` keys the
    source recording and is the unit used for leakage-free splitting.
    """

    trajectories: list
    scene_id: str = "scene"
    recording_id: str = "rec"
    start_time: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def n_agents(self):
        return len(self.trajectories)

    @property
    def n_steps(self):
        return len(self.trajectories[0])

    def states(self):
        """(n, T, 4) array of (x, y, v, psi)."""
        return np.stack([tr.states() for tr in self.trajectories])

    def types(self):
        return np.array([TYPE_INDEX[tr.agent_type] for tr in self.trajectories], dtype=np.intp)

    def agent_ids(self):
        return [tr.agent_id for tr in self.trajectories]

    def permuted(self, order):
        return SceneSample([self.trajectories[i] for i in order], self.scene_id, self.recording_id,
                           self.start_time, dict(self.meta))


def derive_speed(t, x, y):
    """Speed from central differences of position (one-sided at the ends)."""
    if len(t) < 2:
        return np.zeros(len(t))
    vx = np.gradient(x, t)
    vy = np.gradient(y, t)
    return np.hypot(vx, vy)


def derive_heading(x, y, min_disp=1e-6, initial=0.0):
    """Heading from central-difference displacement; held when the agent barely moves."""
    n = len(x)
    psi = np.empty(n)
    prev = initial
    for k in range(n):
        lo, hi = max(k - 1, 0), min(k + 1, n - 1)
        dx, dy = x[hi] - x[lo], y[hi] - y[lo]
        if np.hypot(dx, dy) >= min_disp:
            prev = float(np.arctan2(dy, dx))
        psi[k] = prev
    return wrap_angle(psi)


def load_csv(path, dt=0.1, frame_dt=None):
    """Read a trajectory CSV into per-agent trajectories on a uniform ``dt`` grid.

    Columns ``frame_id, agent_id, agent_type, x, y`` are required; ``v`` and
    ``psi`` are optional and derived when absent or blank. ``frame_dt`` is the
    time between consecutive frame ids (defaults to ``dt``).
    """
    frame_dt = dt if frame_dt is None else frame_dt
    rows = defaultdict(list)
    types = {}
    seen = set()
    last_frame = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in REQUIRED_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"{path}: missing required columns {missing}")
        for lineno, row in enumerate(reader, start=2):
            frame = int(float(row["frame_id"]))
            aid = int(float(row["agent_id"]))
            atype = row["agent_type"].strip().lower()
            if atype not in TYPE_INDEX:
                raise DataError(f"{path}:{lineno}: unknown agent_type {row['agent_type']!r}")
            if (frame, aid) in seen:
                raise DataError(f"{path}:{lineno}: duplicate row for frame {frame}, agent {aid}")
            if aid in last_frame and frame <= last_frame[aid]:
                raise DataError(f"{path}:{lineno}: frames for agent {aid} are not increasing")
            if types.setdefault(aid, atype) != atype:
                raise DataError(f"{path}:{lineno}: agent {aid} changes type")
            seen.add((frame, aid))
            last_frame[aid] = frame
            v = row.get("v")
            psi = row.get("psi")
            rows[aid].append((
                frame * frame_dt,
                float(row["x"]),
                float(row["y"]),
                float(v) if v not in (None, "") else np.nan,
                float(psi) if psi not in (None, "") else np.nan,
            ))
    out = []
    for aid in sorted(rows):
        arr = np.asarray(rows[aid], dtype=np.float64)
        out.append(resample(_complete(aid, types[aid], arr), dt))
    return out


def _complete(aid, atype, arr):
    t, x, y, v, psi = arr.T
    if np.isnan(v).any():
        v = np.where(np.isnan(v), derive_speed(t, x, y), v)
    if np.isnan(psi).any():
        psi = np.where(np.isnan(psi), derive_heading(x, y), psi)
    return AgentTrajectory(aid, atype, t, x, y, v, wrap_angle(psi))


def resample(traj, dt):
    """Linear interpolation onto the grid ``k * dt`` inside the observed span."""
    t = traj.t
    k0 = int(np.ceil(t[0] / dt - 1e-9))
    k1 = int(np.floor(t[-1] / dt + 1e-9))
    grid = np.arange(k0, k1 + 1) * dt
    if len(grid) == len(t) and np.allclose(grid, t, atol=1e-9):
        return AgentTrajectory(traj.agent_id, traj.agent_type, grid, traj.x, traj.y, traj.v, traj.psi)
    psi = np.unwrap(traj.psi)
    return AgentTrajectory(
        traj.agent_id,
        traj.agent_type,
        grid,
        np.interp(grid, t, traj.x),
        np.interp(grid, t, traj.y),
        np.interp(grid, t, traj.v),
        wrap_angle(np.interp(grid, t, psi)),
    )


def write_csv(path, trajectories, dt):
    """Write trajectories in the loader's schema (frame ids are ``round(t / dt)``)."""
    records = []
    for tr in trajectories:
        for k in range(len(tr)):
            records.append((int(round(tr.t[k] / dt)), tr.agent_id, tr.agent_type,
                            tr.x[k], tr.y[k], tr.v[k], tr.psi[k]))
    records.sort(key=lambda r: (r[0], r[1]))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([r[0], r[1], r[2]] + [repr(float(val)) for val in r[3:]])


def make_samples(trajectories, horizon, scene_id="scene", recording_id="rec", stride=1):
    """Slide a ``T_h + T_f`` window over the common time grid.

    Agents that do not cover the whole window are left out of it; windows
    with no agents are skipped.
    """
    if not trajectories:
        return []
    dt = horizon.dt
    idx = [np.round(tr.t / dt).astype(np.int64) for tr in trajectories]
    lo = min(int(i[0]) for i in idx)
    hi = max(int(i[-1]) for i in idx)
    L = horizon.total
    samples = []
    for start in range(lo, hi - L + 2, stride):
        members = []
        for tr, ii in zip(trajectories, idx):
            if ii[0] <= start and ii[-1] >= start + L - 1:
                a = int(start - ii[0])
                members.append(AgentTrajectory(tr.agent_id, tr.agent_type, tr.t[a : a + L], tr.x[a : a + L],
                                               tr.y[a : a + L], tr.v[a : a + L], tr.psi[a : a + L]))
        if members:
            samples.append(SceneSample(members, scene_id, recording_id, start * dt))
    return samples


def _largest_remainder(n, ratios):
    raw = np.asarray(ratios, dtype=np.float64) * n
    counts = np.floor(raw).astype(int)
    rest = n - counts.sum()
    # stable sort keeps the train bucket first on ties
    order = np.argsort(-(raw - counts), kind="stable")
    for i in order[:rest]:
        counts[i] += 1
    return counts


def split(samples, ratios=(0.7, 0.1, 0.2), seed=0):
    """Shuffle recordings with ``seed`` and partition them into train/val/test.

    Bucket sizes are floors of ``ratio * n_recordings`` with the leftover
    recordings handed to the buckets with the largest fractional parts.
    """
    if not samples:
        raise DataError("cannot split an empty sample list")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {ratios}")
    recs = sorted({s.recording_id for s in samples})
    rng = np.random.default_rng(seed)
    order = [recs[i] for i in rng.permutation(len(recs))]
    counts = _largest_remainder(len(recs), ratios)
    bounds = np.cumsum(np.concatenate([[0], counts]))
    buckets = [set(order[bounds[i] : bounds[i + 1]]) for i in range(3)]
    return tuple([s for s in samples if s.recording_id in b] for b in buckets)


def ade_fde(predicted, truth):
    """Average and final displacement error.

    Arrays are agent-major, (N, T_f, 2); a single agent may be passed as (T_f, 2).
    """
    p = np.asarray(predicted, dtype=np.float64)
    g = np.asarray(truth, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: predicted {p.shape} vs truth {g.shape}")
    if p.shape[-1] != 2:
        raise ValueError("last axis must hold (x, y)")
    err = np.linalg.norm(p - g, axis=-1)
    return float(err.mean()), float(err[..., -1].mean())


def best_of_k(pred_sets, truth):
    """Minimum ADE over K joint samples (and the FDE of that sample)."""
    pred_sets = np.asarray(pred_sets, dtype=np.float64)
    if pred_sets.shape[0] < 1:
        raise ValueError("need at least one sample")
    scores = [ade_fde(p, truth) for p in pred_sets]
    best = min(range(len(scores)), key=lambda i: scores[i][0])
    return scores[best]


def metrics_report(ade, fde, min_ade, min_fde, horizon, n_samples):
    return {"ade": ade, "fde": fde, "min_ade": min_ade, "min_fde": min_fde,
            "horizon": horizon, "n_samples": n_samples}
