"""Seeded synthetic interaction scenes plus constant-velocity/acceleration baselines.

Every vehicle is integrated through the bicycle model with controls kept
inside the saturation bounds, so noise-free trajectories are feasible by
construction. Paths are piecewise straight/arc; a feed-forward curvature
command plus heading feedback tracks them. Interaction comes from yielding:
vehicles brake toward a stop point while a higher-priority conflicting
vehicle still holds the shared zone.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data_io import AgentTrajectory, HorizonConfig, make_samples
from .kinematics import BicycleParams, bicycle_step, wrap_angle

ARCHETYPES = ("highway", "intersection", "roundabout")
MAX_SIN_BETA = 0.5
CONTROL_MARGIN = 0.95


class InfeasibleScenario(ValueError):
    pass


@dataclass
class ScenarioSpec:
    archetype: str = "intersection"
    n_agents: int = 3
    duration_steps: int = 14
    dt: float = 0.5
    noise_std: float = 0.0
    seed: int = 0
    l_r: float = 1.5
    a_max: float = 5.0
    bdot_max: float = 0.6
    speed: float | None = None
    radius: float = 10.0

    def __post_init__(self):
        if self.archetype not in ARCHETYPES:
            raise ValueError(f"unknown archetype {self.archetype!r}")
        if self.n_agents < 1:
            raise ValueError("n_agents must be >= 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.duration_steps < 1 or self.dt <= 0:
            raise ValueError("duration_steps and dt must be positive")

    @property
    def bicycle(self):
        return BicycleParams(l_r=self.l_r, dt=self.dt, a_max=self.a_max, bdot_max=self.bdot_max)


@dataclass
class Path:
    """Piecewise path: ``segments`` of (length, curvature) from a start pose."""

    start: np.ndarray
    heading: float
    segments: list
    conflict_s: float | None = None
    conflict_end_s: float | None = None
    group: str = ""
    merge_xy: np.ndarray | None = None

    def curvature(self, s):
        acc = 0.0
        for length, kappa in self.segments:
            if s < acc + length:
                return kappa
            acc += length
        return self.segments[-1][1]

    def heading_at(self, s):
        acc, th = 0.0, self.heading
        for length, kappa in self.segments:
            step = min(max(s - acc, 0.0), length)
            th += kappa * step
            acc += length
            if s <= acc:
                break
        if s > acc:
            th += self.segments[-1][1] * (s - acc)
        return th

    def polyline(self, ds=0.5):
        pts = [self.start.copy()]
        th = self.heading
        p = self.start.copy()
        for length, kappa in self.segments:
            n = max(int(np.ceil(length / ds)), 1)
            h = length / n
            for _ in range(n):
                if abs(kappa) < 1e-12:
                    p = p + h * np.array([np.cos(th), np.sin(th)])
                else:
                    th2 = th + kappa * h
                    p = p + np.array([np.sin(th2) - np.sin(th), np.cos(th) - np.cos(th2)]) / kappa
                    th = th2
                pts.append(p.copy())
        return np.array(pts)


@dataclass
class Agent:
    path: Path
    v0: float
    priority: float = 0.0
    state: np.ndarray = field(default_factory=lambda: np.zeros(5))
    s: float = 0.0
    entered: bool = False
    exited: bool = False
    agent_type: str = "vehicle"

    def exited_ring(self, radius):
        return self.exited or abs(np.hypot(self.state[0], self.state[1]) - radius) > 1.0


def _rot(p, ang):
    c, s = np.cos(ang), np.sin(ang)
    return np.array([c * p[0] - s * p[1], s * p[0] + c * p[1]])


# -- archetype layouts ------------------------------------------------------
def _intersection_paths(rng, n, box=8.0, lane=2.0, approach=(22.0, 34.0), out_len=60.0):
    arms = rng.permutation(4)[:n] if n <= 4 else rng.integers(0, 4, size=n)
    paths = []
    for arm in arms:
        rot = arm * np.pi / 2
        a0 = rng.uniform(*approach)
        start = _rot(np.array([lane, -box - a0]), rot)
        move = rng.choice(["straight", "left", "right"], p=[0.4, 0.3, 0.3])
        if move == "straight":
            segs = [(a0, 0.0), (2 * box, 0.0), (out_len, 0.0)]
            inside = 2 * box
        elif move == "left":
            r = box + lane
            segs = [(a0, 0.0), (r * np.pi / 2, 1.0 / r), (out_len, 0.0)]
            inside = r * np.pi / 2
        else:
            r = box - lane
            segs = [(a0, 0.0), (r * np.pi / 2, -1.0 / r), (out_len, 0.0)]
            inside = r * np.pi / 2
        paths.append(Path(start, rot + np.pi / 2, segs, conflict_s=a0, conflict_end_s=a0 + inside,
                          group=f"arm{arm}:{move}"))
    return paths


def _roundabout_paths(rng, n, radius):
    paths = []
    # agent 0 circulates on the ring from the start
    phase = rng.uniform(0, 2 * np.pi) if n > 1 else 0.0
    start = radius * np.array([np.cos(phase), np.sin(phase)])
    paths.append(Path(start, phase + np.pi / 2, [(2 * np.pi * radius * 4, 1.0 / radius)], group="ring"))
    for arm in rng.permutation(4)[: n - 1] if n - 1 <= 4 else rng.integers(0, 4, size=n - 1):
        rot = arm * np.pi / 2
        a0 = rng.uniform(15.0, 28.0)
        quarters = int(rng.integers(1, 4))
        start = _rot(np.array([radius, -a0]), rot)
        segs = [(a0, 0.0), (quarters * np.pi * radius / 2, 1.0 / radius), (60.0, 0.0)]
        paths.append(Path(start, rot + np.pi / 2, segs, conflict_s=a0,
                          conflict_end_s=a0 + quarters * np.pi * radius / 2, group=f"arm{arm}:q{quarters}",
                          merge_xy=_rot(np.array([radius, 0.0]), rot)))
    return paths


def _highway_paths(rng, n, lane_w=3.5, length=400.0):
    paths = []
    if n == 1:
        return [Path(np.array([0.0, 0.0]), 0.0, [(length, 0.0)], group="lane0")]
    n_lane = n - 1
    xs = np.sort(rng.uniform(-10.0, 60.0, size=n_lane))
    for i, x0 in enumerate(xs):
        lane = i % 2
        paths.append(Path(np.array([x0, lane * lane_w]), 0.0, [(length, 0.0)], conflict_s=None, group=f"lane{lane}"))
    # ramp vehicle merges into lane 0 with an S-curve of two opposite arcs
    r = 60.0
    ang = np.arccos(1.0 - lane_w / (2 * r))
    x0 = rng.uniform(-5.0, 20.0)
    ramp_len = rng.uniform(15.0, 30.0)
    segs = [(ramp_len, 0.0), (r * ang, 1.0 / r), (r * ang, -1.0 / r), (length, 0.0)]
    merge_s = ramp_len + 2 * r * ang
    paths.append(Path(np.array([x0, -lane_w]), 0.0, segs, conflict_s=merge_s - 10.0, conflict_end_s=merge_s,
                      group="ramp", merge_xy=np.array([x0 + ramp_len + 2 * r * np.sin(ang), 0.0])))
    return paths


# -- simulation --------------------------------------------------------------
def _conflicts(a, b):
    if a.path.conflict_s is None or b.path.conflict_s is None:
        return False
    return a.path.group.split(":")[0] != b.path.group.split(":")[0]


def _blocked(agent, others, spec):
    """Whether ``agent`` must hold short of its conflict zone this step."""
    if agent.path.conflict_s is None or agent.entered:
        return False
    if spec.archetype == "intersection":
        return any(_conflicts(agent, o) and o.priority < agent.priority and not o.exited for o in others)
    if spec.archetype == "roundabout":
        phi_e = np.arctan2(agent.path.merge_xy[1], agent.path.merge_xy[0])
        for o in others:
            on_ring = o.path.group == "ring" or (o.entered and not o.exited_ring(spec.radius))
            if not on_ring or o.state[3] < 0.1:
                continue
            phi = np.arctan2(o.state[1], o.state[0])
            gap = np.mod(phi_e - phi, 2 * np.pi)
            if gap * spec.radius / o.state[3] < 2.5 or gap > 2 * np.pi - 0.4:
                return True
        return False
    # highway: the ramp vehicle waits for a gap in lane 0 at the merge point
    if agent.path.group != "ramp":
        return False
    v = max(agent.state[3], 0.1)
    t_self = (agent.path.conflict_end_s - agent.s) / v
    for o in others:
        if o.path.group != "lane0":
            continue
        dx = agent.path.merge_xy[0] - o.state[0]
        t_o = dx / max(o.state[3], 0.1)
        if -1.2 < t_o and abs(t_o - t_self) < 1.5:
            return True
    return False


def _speed_command(agent, others, spec):
    p = spec.bicycle
    v = agent.state[3]
    a = np.clip((agent.v0 - v) / max(4 * spec.dt, 1.0), -CONTROL_MARGIN * p.a_max, CONTROL_MARGIN * p.a_max)
    if _blocked(agent, others, spec):
        if spec.archetype == "highway":
            a = -0.3 * p.a_max
        else:
            d = agent.path.conflict_s - agent.s - 1.0
            a = -v / spec.dt if d <= 0.5 else -v * v / (2.0 * d)
        a = max(a, -CONTROL_MARGIN * p.a_max)
    # never reverse
    return max(a, -v / spec.dt)


def _steer_command(agent, spec):
    p = spec.bicycle
    x, y, psi, v, beta = agent.state
    s_next = agent.s + v * spec.dt
    kappa = agent.path.curvature(s_next)
    heading_err = float(wrap_angle(agent.path.heading_at(s_next) - (psi + beta) - v * np.sin(beta) / p.l_r * spec.dt))
    if v > 0.1:
        kappa = kappa + 0.5 * heading_err / max(v * spec.dt, 1e-6) * 0.2
    sb = np.clip(p.l_r * kappa, -MAX_SIN_BETA, MAX_SIN_BETA)
    target = np.arcsin(sb)
    lim = CONTROL_MARGIN * p.bdot_max
    return float(np.clip((target - beta) / spec.dt, -lim, lim))


def simulate(agents, spec):
    """Integrate all agents for ``duration_steps``; returns (n, T, 5) states."""
    params = spec.bicycle
    T = spec.duration_steps
    out = np.zeros((len(agents), T, 5))
    for k in range(T):
        for i, ag in enumerate(agents):
            out[i, k] = ag.state
        controls = []
        for i, ag in enumerate(agents):
            others = [o for j, o in enumerate(agents) if j != i]
            controls.append((_speed_command(ag, others, spec), _steer_command(ag, spec)))
        for ag, u in zip(agents, controls):
            v = ag.state[3]
            ag.state = bicycle_step(ag.state, u, params)
            ag.s += v * spec.dt
            if ag.path.conflict_s is not None:
                if ag.s >= ag.path.conflict_s:
                    ag.entered = True
                if ag.path.conflict_end_s is not None and ag.s >= ag.path.conflict_end_s:
                    ag.exited = True
    return out


def _build_agents(spec, rng):
    n = spec.n_agents
    if spec.archetype == "intersection":
        paths = _intersection_paths(rng, n)
        speeds = rng.uniform(5.0, 8.0, size=n) if spec.speed is None else np.full(n, spec.speed)
    elif spec.archetype == "roundabout":
        paths = _roundabout_paths(rng, n, spec.radius)
        speeds = rng.uniform(4.0, 6.0, size=n) if spec.speed is None else np.full(n, spec.speed)
    else:
        paths = _highway_paths(rng, n)
        speeds = rng.uniform(10.0, 14.0, size=n) if spec.speed is None else np.full(n, spec.speed)
    for path in paths:
        kmax = max(abs(k) for _, k in path.segments)
        if spec.l_r * kmax > MAX_SIN_BETA:
            raise InfeasibleScenario(f"path curvature {kmax:.3f} 1/m exceeds the steering bound")
    agents = []
    for path, v0 in zip(paths, speeds):
        kappa0 = path.curvature(0.0)
        beta0 = float(np.arcsin(spec.l_r * kappa0))
        state = np.array([path.start[0], path.start[1], path.heading - beta0, v0, beta0])
        # first-come priority: free-flow arrival time at the shared zone
        prio = np.inf if path.conflict_s is None else path.conflict_s / max(v0, 1e-6)
        agents.append(Agent(path=path, v0=float(v0), priority=prio, state=state))
    return agents


def generate(spec):
    """Generate one recording.

    Returns ``(trajectories, geometry)``: a list of :class:`AgentTrajectory`
    (observed x, y with Gaussian noise; true speed and yaw) and a geometry dict
    with lane polylines, conflict points and the noise-free states.
    """
    rng = np.random.default_rng(spec.seed)
    agents = _build_agents(spec, rng)
    states = simulate(agents, spec)
    noise = rng.normal(0.0, spec.noise_std, size=states[..., :2].shape) if spec.noise_std > 0 else 0.0
    xy = states[..., :2] + noise
    t = np.arange(spec.duration_steps) * spec.dt
    trajs = [
        AgentTrajectory(i, ag.agent_type, t.copy(), xy[i, :, 0], xy[i, :, 1], states[i, :, 3],
                        wrap_angle(states[i, :, 2]))
        for i, ag in enumerate(agents)
    ]
    geometry = {
        "archetype": spec.archetype,
        "lanes": [ag.path.polyline().tolist() for ag in agents],
        "groups": [ag.path.group for ag in agents],
        "conflict_points": [
            ag.path.polyline(ds=0.5)[min(int(ag.path.conflict_s / 0.5), len(ag.path.polyline()) - 1)].tolist()
            for ag in agents if ag.path.conflict_s is not None
        ],
        "free_speeds": [ag.v0 for ag in agents],
        "priorities": [None if not np.isfinite(ag.priority) else ag.priority for ag in agents],
        "true_states": states.tolist(),
    }
    return trajs, geometry


def generate_samples(spec, horizon):
    trajs, geometry = generate(spec)
    return make_samples(trajs, horizon, scene_id=spec.archetype, recording_id=f"{spec.archetype}-{spec.seed}"), geometry


def generate_dataset(archetype, n_scenes, horizon, seed=0, noise_std=0.02, agents=(2, 4), warmup=(0, 6)):
    """``n_scenes`` one-window recordings of ``archetype`` with ``horizon.total`` steps each.

    Each recording skips a random number of warm-up steps so windows start at
    different phases of the interaction.
    """
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n_scenes):
        n = int(rng.integers(agents[0], agents[1] + 1))
        skip = int(rng.integers(warmup[0], warmup[1] + 1))
        spec = ScenarioSpec(archetype=archetype, n_agents=n, duration_steps=horizon.total + skip, dt=horizon.dt,
                            noise_std=noise_std, seed=int(rng.integers(2**31)))
        trajs, _ = generate(spec)
        trajs = [AgentTrajectory(tr.agent_id, tr.agent_type, tr.t[skip:], tr.x[skip:], tr.y[skip:], tr.v[skip:],
                                 tr.psi[skip:]) for tr in trajs]
        win = make_samples(trajs, horizon, scene_id=archetype, recording_id=f"{archetype}-{i}")
        samples.append(win[0])
    return samples


def inverse_kinematics(states, params):
    """Recover controls from noise-free (T, 5) bicycle states and re-integrate.

    Returns ``(controls, residual)`` where residual is the max position error
    per step of the re-integrated trajectory.
    """
    states = np.asarray(states, dtype=np.float64)
    dt = params.dt
    a = np.diff(states[:, 3]) / dt
    bdot = np.diff(states[:, 4]) / dt
    controls = np.stack([a, bdot], axis=1)
    s = states[0].copy()
    worst = 0.0
    for k in range(len(controls)):
        s = bicycle_step(s, controls[k], params)
        worst = max(worst, float(np.hypot(*(s[:2] - states[k + 1, :2]))))
    return controls, worst


def observed_inverse_kinematics(traj, params, beta0=0.0):
    """Controls implied by an observed (x, y, v, psi) trajectory.

    The slip angle is read off as travel direction minus yaw; the residual is
    the max per-step position error when integrating those controls.
    """
    x, y, v, psi = traj.x, traj.y, traj.v, traj.psi
    n = len(x)
    beta = np.empty(n)
    prev = beta0
    for k in range(n - 1):
        d = np.hypot(x[k + 1] - x[k], y[k + 1] - y[k])
        if d > 1e-9:
            prev = float(wrap_angle(np.arctan2(y[k + 1] - y[k], x[k + 1] - x[k]) - psi[k]))
        beta[k] = prev
    beta[-1] = prev
    states = np.stack([x, y, np.unwrap(psi), v, beta], axis=1)
    return inverse_kinematics(states, params)


def cvm_baseline(history, T_f):
    """Extrapolate the last per-step displacement of (T_h, 2) positions."""
    h = np.asarray(history, dtype=np.float64)
    if len(h) < 2:
        raise ValueError("constant-velocity baseline needs at least 2 history steps")
    vel = h[-1] - h[-2]
    k = np.arange(1, T_f + 1)[:, None]
    return h[-1] + k * vel


def cam_baseline(history, T_f):
    """Hold the last second difference of (T_h, 2) positions constant."""
    h = np.asarray(history, dtype=np.float64)
    if len(h) < 3:
        raise ValueError("constant-acceleration baseline needs at least 3 history steps")
    vel = h[-1] - h[-2]
    acc = h[-1] - 2 * h[-2] + h[-3]
    k = np.arange(1, T_f + 1)[:, None]
    return h[-1] + k * vel + acc * k * (k + 1) / 2.0


def baseline_predictions(sample, horizon, kind="cvm"):
    """Baseline forecasts for every agent of a sample -> (n, T_f, 2)."""
    fn = cvm_baseline if kind == "cvm" else cam_baseline
    xy = sample.states()[:, : horizon.T_h, :2]
    return np.stack([fn(h, horizon.T_f) for h in xy])


__all__ = [
    "ScenarioSpec", "generate", "generate_samples", "generate_dataset", "cvm_baseline", "cam_baseline",
    "baseline_predictions", "inverse_kinematics", "observed_inverse_kinematics", "InfeasibleScenario",
    "HorizonConfig",
]
