import numpy as np
import pytest

from stgdat.data_io import AgentTrajectory, SceneSample

ACCEPTANCE = {}


def record_acceptance(number, name, passed, detail=""):
    """``passed`` is a bool or an explicit status word such as ``"FAIL (soft)"``."""
    status = passed if isinstance(passed, str) else ("PASS" if passed else "FAIL")
    ACCEPTANCE[number] = (name, status, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        name, status, detail = ACCEPTANCE[number]
        line = f"criterion {number:2d} {name}: {status}"
        terminalreporter.write_line(f"{line}  {detail}" if detail else line)


def line_traj(agent_id, agent_type, start, velocity, steps, dt, t0=0.0):
    start = np.asarray(start, dtype=np.float64)
    velocity = np.asarray(velocity, dtype=np.float64)
    k = np.arange(steps)
    xy = start + k[:, None] * dt * velocity
    speed = np.full(steps, np.hypot(*velocity))
    psi = np.full(steps, np.arctan2(velocity[1], velocity[0]))
    return AgentTrajectory(agent_id, agent_type, t0 + k * dt, xy[:, 0], xy[:, 1], speed, psi)


def random_scene(rng, n_agents, steps, dt=0.5, spread=12.0, types=None):
    """Agents on gentle random arcs; not physically tuned, just generic inputs."""
    trajs = []
    kinds = ("vehicle", "pedestrian", "cyclist")
    for i in range(n_agents):
        p = rng.uniform(-spread, spread, 2)
        v = rng.uniform(0.5, 8.0)
        psi = rng.uniform(-np.pi, np.pi)
        w = rng.uniform(-0.3, 0.3)
        rows = []
        for _ in range(steps):
            rows.append((p[0], p[1], v, psi))
            p = p + v * dt * np.array([np.cos(psi), np.sin(psi)])
            psi = float(np.mod(psi + w * dt + np.pi, 2 * np.pi) - np.pi)
        x, y, vv, pp = np.asarray(rows).T
        kind = types[i] if types is not None else kinds[int(rng.integers(3))]
        trajs.append(AgentTrajectory(100 + i, kind, np.arange(steps) * dt, x, y, vv, pp))
    return SceneSample(trajs, "rand", f"rand-{int(rng.integers(1 << 30))}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
