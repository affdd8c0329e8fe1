"""Self-checks on small hand-built scenes (used by the CLI and the test-suite)."""
from __future__ import annotations

import numpy as np

from .context_maps import build_scene_maps
from .data_io import AgentTrajectory, SceneSample
from .model import Model, ModelConfig, collate, prepare
from .nn import grad_check

TOY_TYPES = ("vehicle", "pedestrian", "cyclist")


def toy_scene(seed=0, T_h=4, T_f=5, dt=0.5):
    """Three slow agents of different types turning gently within a few metres."""
    rng = np.random.default_rng(seed)
    T = T_h + T_f
    trajs = []
    for i, typ in enumerate(TOY_TYPES):
        p = rng.uniform(-3.0, 3.0, 2)
        v = rng.uniform(0.5, 1.5)
        psi = rng.uniform(-np.pi, np.pi)
        w = rng.uniform(-0.2, 0.2)
        rows = []
        for _ in range(T):
            rows.append((p[0], p[1], v, psi))
            p = p + v * dt * np.array([np.cos(psi), np.sin(psi)])
            psi += w * dt
        x, y, vv, pp = np.asarray(rows).T
        trajs.append(AgentTrajectory(i, typ, np.arange(T) * dt, x, y, vv, pp))
    return SceneSample(trajs, "toy", "toy")


def jitter_biases(store, rng, scale=0.05):
    """Move zero-initialized biases off activation kinks so the check point is generic."""
    for name, p in store.items():
        if name.endswith(".b"):
            p.data = rng.normal(0.0, scale, p.shape)


def grad_check_toy(ablation, seed=0, max_entries=6, T_h=4, T_f=5, dt=0.5):
    """Finite-difference check of the full training loss for one ablation.

    Returns parameter name -> worst relative error over the probed entries.
    """
    cfg = ModelConfig(ablation=ablation, T_h=T_h, T_f=T_f, dt=dt)
    scene = toy_scene(seed, T_h, T_f, dt)
    maps = build_scene_maps([scene])
    model = Model(cfg, seed=seed)
    rng = np.random.default_rng(seed + 1)
    jitter_biases(model.store, rng)
    batch = collate([prepare(scene, cfg, maps[scene.scene_id])])
    eps = rng.standard_normal((batch.n, 32))
    prior = rng.standard_normal((batch.n, 32))

    def loss():
        return model.loss(batch, eps=eps, prior=prior)[0]

    return grad_check(loss, model.store, h=(1e-5, 1e-7), coarse_h=1e-3, stop_below=1e-6,
                      max_entries=max_entries,
                      rng=np.random.default_rng(seed + 2))
