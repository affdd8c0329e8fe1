"""Adam optimizer over a :class:`~stgdat.nn.params.ParamStore`."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class OptimizerConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            val = getattr(self, name)
            if not 0.0 < val < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {val}")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def global_norm(store):
    total = 0.0
    for _, p in store.items():
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    return float(np.sqrt(total))


def clip_grad_norm(store, max_norm):
    """Scale all gradients so their global L2 norm is at most ``max_norm``."""
    norm = global_norm(store)
    if norm > max_norm:
        scale = max_norm / norm
        for _, p in store.items():
            if p.grad is not None:
                p.grad *= scale
    return norm


def optimizer_step(store, config):
    """Apply one bias-corrected Adam update in place and clear gradients."""
    for name, p in store.items():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise NonFiniteGradient(f"non-finite gradient in parameter {name!r}")
    store.step += 1
    t = store.step
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in store.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        m = store.m.get(name)
        v = store.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        store.m[name], store.v[name] = m, v
        p.data = p.data - config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.eps)
        p.grad = None
    return store
