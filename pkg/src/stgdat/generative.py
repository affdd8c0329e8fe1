"""Latent encoder, reparameterized sampling and the reconstruction / KL / MMD objective."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .nn import MLP
from .nn import tensor as tt

LATENT_DIM = 32
BANDWIDTH_FLOOR = 1e-6


@dataclass(frozen=True)
class LossConfig:
    """Weights of the reconstruction (``gamma``), KL (``alpha``) and MMD (``beta_w``) terms."""

    gamma: float = 1.0
    alpha: float = 0.5
    beta_w: float = 1.0
    bandwidth: str = "median"

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not 0.0 < 1.0 - self.alpha < self.beta_w:
            raise ValueError(
                f"loss weights must satisfy 0 < 1 - alpha < beta_w; got alpha={self.alpha}, beta_w={self.beta_w}"
            )
        if self.bandwidth != "median":
            raise ValueError(f"unsupported bandwidth policy {self.bandwidth!r}")

    def to_dict(self):
        return asdict(self)


class Encoder:
    """Three-layer MLP mapping ``[history summary | future summary]`` to the posterior mean."""

    def __init__(self, store, rng, in_dim=128, hidden=128, latent=LATENT_DIM, prefix="enc"):
        self.mlp = MLP(store, prefix, [in_dim, hidden, hidden, latent], rng)

    def __call__(self, v_hist, v_fut):
        return self.mlp(tt.concat([v_hist, v_fut], axis=1))


def sample_latent(mu=None, rng=None, n=None, dim=LATENT_DIM, eps=None):
    """Posterior sample ``mu + eps`` when ``mu`` is given, else ``n`` prior draws.

    ``eps`` overrides the noise draw (shape of ``mu`` or ``(n, dim)``).
    """
    if mu is not None:
        mu = tt.as_tensor(mu)
        if eps is None:
            eps = rng.standard_normal(mu.shape)
        return mu + np.asarray(eps, dtype=np.float64)
    if eps is None:
        eps = rng.standard_normal((n, dim))
    return tt.Tensor(np.asarray(eps, dtype=np.float64))


def kl_term(mu):
    """Mean over rows of KL(N(mu, I) || N(0, I)) = ||mu||^2 / 2."""
    mu = tt.as_tensor(mu)
    if mu.ndim == 1:
        return tt.tsum(mu * mu) * 0.5
    return tt.mean(tt.tsum(mu * mu, axis=1)) * 0.5


def _sq_dists(a, b):
    """Pairwise squared distances built from differences (exactly zero on identical rows)."""
    d = tt.reshape(a, (a.shape[0], 1, a.shape[1])) - tt.reshape(b, (1, b.shape[0], b.shape[1]))
    return tt.tsum(d * d, axis=2)


def median_bandwidth(z, p):
    """Median pairwise distance over the pooled sample (differentiable, floored)."""
    pooled = tt.concat([tt.as_tensor(z), tt.as_tensor(p)], axis=0)
    n = pooled.shape[0]
    sq = _sq_dists(pooled, pooled)
    iu, ju = np.triu_indices(n, k=1)
    flat = tt.reshape(sq, (n * n,))
    pair_sq = tt.gather_rows(flat, iu * n + ju)
    order = np.argsort(pair_sq.data, kind="stable")
    m = len(order)
    if m % 2:
        mid_sq = tt.gather_rows(pair_sq, order[m // 2 : m // 2 + 1])
        med = tt.sqrt(tt.maximum(mid_sq, BANDWIDTH_FLOOR**2))
    else:
        both = tt.gather_rows(pair_sq, order[m // 2 - 1 : m // 2 + 1])
        med = tt.mean(tt.sqrt(tt.maximum(both, BANDWIDTH_FLOOR**2)))
    return tt.maximum(tt.reshape(med, ()), BANDWIDTH_FLOOR)


def mmd_term(z, p, bandwidth=None):
    """Biased (V-statistic) MMD^2 with a Gaussian RBF kernel."""
    z, p = tt.as_tensor(z), tt.as_tensor(p)
    if z.shape[0] < 2 or p.shape[0] < 2:
        raise ValueError("MMD needs at least two samples on each side")
    if z.shape[1] != p.shape[1]:
        raise ValueError(f"latent widths differ: {z.shape[1]} vs {p.shape[1]}")
    sigma = median_bandwidth(z, p) if bandwidth is None else tt.as_tensor(float(bandwidth))
    inv = 1.0 / (sigma * sigma * 2.0)

    def k(a, b):
        return tt.mean(tt.exp(-(_sq_dists(a, b) * inv)))

    return k(z, z) + k(p, p) - k(z, p) * 2.0


def reconstruction_term(pred, truth):
    """Mean squared position error over all agent-steps (sum over x, y)."""
    pred = tt.as_tensor(pred)
    diff = pred - np.asarray(truth, dtype=np.float64)
    return tt.mean(tt.tsum(diff * diff, axis=-1))


def total_loss(pred, truth, mu, z, prior, config):
    """Return ``(total, parts)``; ``parts`` holds the float value of each term."""
    recon = reconstruction_term(pred, truth)
    kl = kl_term(mu)
    mmd = mmd_term(z, prior)
    total = recon * config.gamma + kl * config.alpha + mmd * config.beta_w
    parts = {"recon": recon.item(), "kl": kl.item(), "mmd": mmd.item(), "total": total.item()}
    return total, parts
