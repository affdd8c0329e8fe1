"""Mini-batch training with early stopping, checkpoints and JSON-lines metrics."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .context_maps import build_scene_maps
from .data_io import AgentTrajectory, SceneSample, ade_fde
from .decoder import gaussian_rollout, monte_carlo_rollout
from .model import ABLATIONS, Model, ModelConfig, collate, prepare
from .nn import OptimizerConfig, clip_grad_norm, optimizer_step
from .nn.params import read_checkpoint, save_checkpoint, to_checkpoint


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    seed: int = 0
    patience: int | None = 10
    clip_norm: float = 5.0
    optimizer: dict = field(default_factory=lambda: asdict(OptimizerConfig()))

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be >= 1 or null")
        if not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive")
        OptimizerConfig(**self.optimizer)

    @property
    def optimizer_config(self):
        return OptimizerConfig(**self.optimizer)


def full_config(model_config, train_config):
    return {"model": model_config.to_dict(), "train": asdict(train_config)}


@dataclass
class TrainResult:
    model: Model
    history: list
    best_epoch: int
    best_val_ade: float
    maps: dict


def _streams(seed):
    ss = np.random.SeedSequence(seed)
    shuffle, latent = ss.spawn(2)
    return np.random.default_rng(shuffle), np.random.default_rng(latent)


def evaluate(model, preps, truths):
    """Single-draw ADE/FDE at the prior mean over prepared history-only samples."""
    if not preps:
        return float("nan"), float("nan")
    out = model.predict(collate(preps))
    return ade_fde(out.positions.data, np.concatenate(truths))


def prepare_split(samples, config, maps, with_future):
    return [prepare(s, config, maps.get(s.scene_id), with_future) for s in samples]


def train(train_samples, val_samples, model_config, train_config, maps=None, metrics_path=None, log=None):
    """Fit a model; the returned model holds the parameters of the best validation epoch.

    ``maps`` maps ``scene_id`` to a context map; by default they are built from
    ``train_samples`` only. Raises :class:`TrainingError` on a non-finite loss.
    """
    if not train_samples:
        raise ValueError("training split is empty")
    if not val_samples:
        raise ValueError("validation split is empty")
    if maps is None:
        maps = build_scene_maps(train_samples) if model_config.uses_context else {}
    model = Model(model_config, seed=train_config.seed)
    opt = train_config.optimizer_config
    shuffle_rng, latent_rng = _streams(train_config.seed)
    train_preps = prepare_split(train_samples, model_config, maps, True)
    val_preps = prepare_split(val_samples, model_config, maps, False)
    val_truth = [s.states()[:, model_config.T_h : model_config.T_h + model_config.T_f, :2] for s in val_samples]

    history = []
    best = (np.inf, 0, model.store.state_dict())
    stale = 0
    metrics_fh = open(metrics_path, "w") if metrics_path else None
    try:
        for epoch in range(1, train_config.epochs + 1):
            order = shuffle_rng.permutation(len(train_preps))
            sums = {"recon": 0.0, "kl": 0.0, "mmd": 0.0, "total": 0.0}
            n_batches = 0
            for bi, start in enumerate(range(0, len(order), train_config.batch_size)):
                batch = collate([train_preps[i] for i in order[start : start + train_config.batch_size]])
                loss, parts = model.loss(batch, latent_rng)
                if not np.isfinite(parts["total"]):
                    raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}")
                loss.backward()
                grad_norm = clip_grad_norm(model.store, train_config.clip_norm)
                if not np.isfinite(grad_norm):
                    raise TrainingError(f"non-finite gradient at epoch {epoch}, batch {bi}")
                optimizer_step(model.store, opt)
                for k in sums:
                    sums[k] += parts[k]
                n_batches += 1
            val_ade, val_fde = evaluate(model, val_preps, val_truth)
            row = {"epoch": epoch, **{k: v / n_batches for k, v in sums.items()},
                   "val_ade": val_ade, "val_fde": val_fde}
            history.append(row)
            if metrics_fh:
                metrics_fh.write(json.dumps(row) + "\n")
            if log:
                log(row)
            if val_ade < best[0]:
                best = (val_ade, epoch, model.store.state_dict())
                stale = 0
            else:
                stale += 1
                if train_config.patience is not None and stale >= train_config.patience:
                    break
    finally:
        if metrics_fh:
            metrics_fh.close()
    model.store.load_state_dict(best[2])
    return TrainResult(model, history, best[1], float(best[0]), maps)


def save_model(path, model, train_config, extra=None):
    return save_checkpoint(path, model.store, train_config.seed, full_config(model.config, train_config), extra)


def model_checkpoint(model, train_config, extra=None):
    return to_checkpoint(model.store, train_config.seed, full_config(model.config, train_config), extra)


def load_model(path):
    """Rebuild a :class:`Model` from a checkpoint file -> ``(model, train_config, doc)``."""
    doc, state = read_checkpoint(path)
    cfg = doc["config"]
    model_config = ModelConfig(**cfg["model"])
    train_config = TrainConfig(**cfg["train"])
    model = Model(model_config, seed=train_config.seed)
    model.store.load_state_dict(state)
    return model, train_config, doc


def predict(model, samples, maps=None, k=1, mode="det", seed=0, n_particles=100, eps=None):
    """Forecast every sample from its history.

    ``mode`` is ``det`` (single draw at the prior mean), ``sample`` (``k``
    prior draws), ``gaussian`` or ``mc`` (prior-mean controls with linearized
    or particle uncertainty for kinematic agents). Returns one dict per sample.
    """
    cfg = model.config
    if mode not in ("det", "sample", "gaussian", "mc"):
        raise ValueError(f"unknown prediction mode {mode!r}")
    if mode in ("gaussian", "mc") and not cfg.kinematic:
        raise ValueError(f"{mode} mode needs a T+C+K checkpoint, this one is {cfg.ablation}")
    if k < 1:
        raise ValueError("k must be >= 1")
    maps = maps or {}
    rng = np.random.default_rng(seed)
    results = []
    for s in samples:
        if s.n_steps < cfg.T_h:
            raise ValueError(f"sample needs {cfg.T_h} history steps, has {s.n_steps}")
        hist = SceneSample([_truncate(tr, cfg.T_h) for tr in s.trajectories], s.scene_id, s.recording_id,
                           s.start_time)
        batch = collate([prepare(hist, cfg, maps.get(s.scene_id), with_future=False)])
        draws = []
        n_draws = k if mode == "sample" else 1
        outs = []
        for d in range(n_draws):
            if eps is not None:
                z = np.asarray(eps[d], dtype=np.float64)
            elif mode == "sample":
                z = rng.standard_normal((batch.n, 32))
            else:
                z = None
            out = model.predict(batch, z)
            outs.append(out)
            draws.append(out.positions.data)
        entry = {"scene_id": s.scene_id, "recording_id": s.recording_id, "agent_ids": s.agent_ids(),
                 "mode": mode, "samples": np.stack(draws)}
        if mode in ("gaussian", "mc"):
            out = outs[0]
            params = cfg.bicycle
            per_agent = []
            for i in range(batch.n):
                if not out.kinematic[i]:
                    per_agent.append(None)
                    continue
                if mode == "gaussian":
                    beliefs = gaussian_rollout(out.states[i, 0], out.controls[i], out.control_std[i], params)
                    per_agent.append({"mean": np.stack([b.mean for b in beliefs[1:]]),
                                      "cov": np.stack([b.cov for b in beliefs[1:]])})
                else:
                    parts = monte_carlo_rollout(out.states[i, 0], out.controls[i], out.control_std[i], rng,
                                                params, n_particles)
                    per_agent.append({"particles": parts[:, 1:]})
            entry["uncertainty"] = per_agent
        results.append(entry)
    return results


def _truncate(tr, n):
    return AgentTrajectory(tr.agent_id, tr.agent_type, tr.t[:n], tr.x[:n], tr.y[:n], tr.v[:n], tr.psi[:n])


def ablation_configs(base):
    """One :class:`ModelConfig` per ablation, otherwise identical to ``base``."""
    return {a: replace(base, ablation=a) for a in ABLATIONS}
