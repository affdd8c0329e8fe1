"""End-to-end predictor: features, graph dual attention, latent code and decoder."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .context_maps import CROP_SIZE, extract_many
from .data_io import HorizonConfig
from .decoder import Decoder
from .features import NODE_DIM, SE_DIM, SPEED_SCALE, FeatureExtractor, relation_inputs, state_inputs
from .gdat import GDAT, NodeGraph
from .generative import LATENT_DIM, Encoder, LossConfig, mmd_term, kl_term, reconstruction_term, sample_latent
from .kinematics import BicycleParams, initial_state_from_history
from .nn import ParamStore
from .nn import tensor as tt
from .scene_graph import GraphConfig, build_graphs

ABLATIONS = ("T", "T+C-ATT", "T+C", "T+C+K")


@dataclass(frozen=True)
class ModelConfig:
    ablation: str = "T+C+K"
    rounds: int = 2
    edge_distance: float = 30.0
    crop_size: int = CROP_SIZE
    l_r: float = 1.5
    a_max: float = 5.0
    bdot_max: float = 0.6
    T_h: int = 8
    T_f: int = 12
    dt: float = 0.4
    loss: dict = field(default_factory=lambda: LossConfig().to_dict())

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}; choose from {ABLATIONS}")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        LossConfig(**self.loss)
        HorizonConfig(self.T_h, self.T_f, self.dt)

    @property
    def horizon(self):
        return HorizonConfig(self.T_h, self.T_f, self.dt)

    @property
    def bicycle(self):
        return BicycleParams(self.l_r, self.dt, self.a_max, self.bdot_max)

    @property
    def loss_config(self):
        return LossConfig(**self.loss)

    @property
    def uses_context(self):
        return self.ablation != "T"

    @property
    def uniform_attention(self):
        return self.ablation == "T+C-ATT"

    @property
    def kinematic(self):
        return self.ablation == "T+C+K"

    def to_dict(self):
        return asdict(self)


@dataclass
class Prepared:
    """Network-ready arrays for one sample over ``steps`` time steps (agent-major)."""

    n: int
    steps: int
    types: np.ndarray
    state_in: np.ndarray
    crops: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    relations: np.ndarray
    hist_xy: np.ndarray
    fut_xy: np.ndarray
    s0: np.ndarray
    center: np.ndarray


def prepare(sample, config, cmap=None, with_future=True):
    """Precompute inputs of one :class:`SceneSample` (crops, graphs, initial states)."""
    T_h, T_f = config.T_h, config.T_f
    states = sample.states()
    n, T = states.shape[:2]
    if T < T_h or (with_future and T < T_h + T_f):
        raise ValueError(f"sample has {T} steps, need {T_h + (T_f if with_future else 0)}")
    steps = T_h + T_f if with_future else T_h
    states = states[:, :steps]
    center = states[:, T_h - 1, :2].mean(axis=0)
    state_in = state_inputs(states, center[None, None])
    if config.uses_context and cmap is not None:
        crops = extract_many(cmap, states[..., :2].reshape(-1, 2), states[..., 3].reshape(-1),
                             config.crop_size, config.crop_size)
        peak = cmap.density.max()
        crops[..., 0] *= 1.0 / peak if peak > 0 else 0.0
        crops[..., 1:] *= 1.0 / SPEED_SCALE
    else:
        crops = np.zeros((n * steps, config.crop_size, config.crop_size, 3))
    hg, fg = build_graphs(states, GraphConfig(config.edge_distance), T_h)
    src, dst, rel = [], [], []
    for g, offset in ((hg, 0), (fg, T_h)):
        if g is None:
            continue
        for k in range(len(g.steps)):
            src.append(g.src[k] * steps + offset + k)
            dst.append(g.dst[k] * steps + offset + k)
            rel.append(g.relations[k])
    hist_xy = states[:, :T_h, :2]
    s0 = np.stack([
        initial_state_from_history(hist_xy[i], states[i, T_h - 1, 2], config.l_r, config.dt,
                                   fallback_heading=states[i, T_h - 1, 3])
        for i in range(n)
    ])
    fut = sample.states()[:, T_h : T_h + T_f, :2] if with_future else np.zeros((n, 0, 2))
    return Prepared(n, steps, sample.types(), state_in.reshape(n * steps, -1), crops.reshape(n * steps, *crops.shape[-3:]),
                    np.concatenate(src).astype(np.intp), np.concatenate(dst).astype(np.intp),
                    relation_inputs(np.concatenate(rel).reshape(-1, 5)), hist_xy, fut, s0, center)


@dataclass
class Batch:
    n: int
    steps: int
    types: np.ndarray
    node_types: np.ndarray
    state_in: np.ndarray
    crops: np.ndarray
    graph: NodeGraph
    relations: np.ndarray
    hist_xy: np.ndarray
    fut_xy: np.ndarray
    s0: np.ndarray
    sizes: list


def collate(preps):
    """Concatenate prepared samples into one disconnected graph."""
    if not preps:
        raise ValueError("empty batch")
    steps = preps[0].steps
    if any(p.steps != steps for p in preps):
        raise ValueError("all samples in a batch must cover the same steps")
    src, dst = [], []
    node_off = 0
    for p in preps:
        src.append(p.src + node_off)
        dst.append(p.dst + node_off)
        node_off += p.n * steps
    types = np.concatenate([p.types for p in preps])
    return Batch(
        n=int(sum(p.n for p in preps)),
        steps=steps,
        types=types,
        node_types=np.repeat(types, steps),
        state_in=np.concatenate([p.state_in for p in preps]),
        crops=np.concatenate([p.crops for p in preps]),
        graph=NodeGraph(node_off, np.concatenate(src), np.concatenate(dst)),
        relations=np.concatenate([p.relations for p in preps]),
        hist_xy=np.concatenate([p.hist_xy for p in preps]),
        fut_xy=np.concatenate([p.fut_xy for p in preps]),
        s0=np.concatenate([p.s0 for p in preps]),
        sizes=[p.n for p in preps],
    )


class Model:
    """All parameters live in one :class:`ParamStore`; the ablation picks the forward path."""

    def __init__(self, config, seed=0):
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.store = ParamStore()
        self.features = FeatureExtractor(self.store, rng)
        self.features.build_context_head((config.crop_size, config.crop_size))
        self.gdat = GDAT(self.store, rng, rounds=config.rounds)
        self.encoder = Encoder(self.store, rng, in_dim=2 * NODE_DIM)
        self.decoder = Decoder(self.store, rng, summary_dim=NODE_DIM, latent_dim=LATENT_DIM)

    def summaries(self, batch, record=None):
        """Per-agent history (and, with future steps, future) summaries."""
        cfg = self.config
        se = self.features.embed_states(batch.state_in, batch.node_types)
        if cfg.uses_context:
            ce = self.features.embed_context(batch.crops)
        else:
            ce = tt.Tensor(np.zeros((batch.graph.n_nodes, NODE_DIM - SE_DIM)))
        v = tt.concat([se, ce], axis=1)
        if batch.graph.src.size:
            re = self.features.embed_relation(batch.relations)
        else:
            re = tt.Tensor(np.zeros((0, 16)))
        ranges = [(0, cfg.T_h)]
        if batch.steps > cfg.T_h:
            ranges.append((cfg.T_h, batch.steps))
        return self.gdat(v, re, batch.graph, batch.n, ranges, cfg.uniform_attention, record)

    def decode(self, batch, v_hist, z):
        cfg = self.config
        return self.decoder(v_hist, z, batch.hist_xy, batch.s0, batch.types, cfg.T_f, cfg.bicycle, cfg.kinematic)

    def loss(self, batch, rng=None, eps=None, prior=None):
        """Training objective on a batch with future steps -> ``(loss, parts)``."""
        if batch.steps <= self.config.T_h:
            raise ValueError("training batches need future steps")
        v_hist, v_fut = self.summaries(batch)
        mu = self.encoder(v_hist, v_fut)
        z = sample_latent(mu, rng, eps=eps)
        if prior is None:
            prior = rng.standard_normal(mu.shape)
        out = self.decode(batch, v_hist, z)
        cfg = self.config.loss_config
        recon = reconstruction_term(out.positions, batch.fut_xy)
        kl = kl_term(mu)
        total = recon * cfg.gamma + kl * cfg.alpha
        mmd_val = 0.0
        if batch.n >= 2:
            mmd = mmd_term(z, prior)
            total = total + mmd * cfg.beta_w
            mmd_val = mmd.item()
        parts = {"recon": recon.item(), "kl": kl.item(), "mmd": mmd_val, "total": total.item()}
        return total, parts

    def predict(self, batch, z=None, record=None):
        """Decode from history only; ``z`` defaults to the prior mean (zeros)."""
        with tt.no_grad():
            hist_only = batch
            if batch.steps > self.config.T_h:
                raise ValueError("prediction batches must be prepared without future steps")
            (v_hist,) = self.summaries(hist_only, record)
            if z is None:
                z = np.zeros((batch.n, LATENT_DIM))
            return self.decode(batch, v_hist, tt.as_tensor(z))
