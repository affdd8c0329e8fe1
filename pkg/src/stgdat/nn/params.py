"""Named parameter storage and JSON checkpoints."""
from __future__ import annotations

import hashlib
import json
from collections import OrderedDict

import numpy as np

from .tensor import Tensor

FORMAT_VERSION = 1


class ParamStore:
    """Ordered mapping from parameter name to a trainable :class:`Tensor`.

    Iteration order is insertion order, which makes optimizer updates and
    checkpoint layout deterministic. Adam moments live alongside the values
    so a store can be checkpointed and resumed as one object.
    """

    def __init__(self):
        self._params = OrderedDict()
        self.m = {}
        self.v = {}
        self.step = 0

    def __contains__(self, name):
        return name in self._params

    def __getitem__(self, name):
        return self._params[name]

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def add(self, name, value):
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def glorot(self, name, shape, rng, fan_in=None, fan_out=None):
        """Uniform init in +-sqrt(6 / (fan_in + fan_out))."""
        fan_in = shape[-2] if fan_in is None else fan_in
        fan_out = shape[-1] if fan_out is None else fan_out
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return self.add(name, rng.uniform(-bound, bound, size=shape))

    def zeros(self, name, shape):
        return self.add(name, np.zeros(shape))

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def n_values(self):
        return int(sum(p.size for p in self._params.values()))

    def grads(self):
        """Gradient arrays in parameter order; missing gradients read as zero."""
        return OrderedDict(
            (k, np.zeros_like(p.data) if p.grad is None else p.grad) for k, p in self._params.items()
        )

    def state_dict(self):
        return OrderedDict((k, p.data.copy()) for k, p in self._params.items())

    def load_state_dict(self, state, strict=True):
        missing = [k for k in self._params if k not in state]
        extra = [k for k in state if k not in self._params]
        if strict and (missing or extra):
            raise KeyError(f"checkpoint mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for k, p in self._params.items():
            if k in state:
                arr = np.asarray(state[k], dtype=np.float64)
                if arr.shape != p.shape:
                    raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {p.shape}")
                p.data = arr.copy()


def config_hash(config):
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def to_checkpoint(store, seed, config, extra=None):
    """Serialize values to the JSON checkpoint layout (row-major lists)."""
    doc = {
        "metadata": {
            "format_version": FORMAT_VERSION,
            "seed": seed,
            "config_hash": config_hash(config),
        },
        "config": config,
        "params": {
            name: {"shape": list(p.shape), "values": p.data.ravel().tolist()} for name, p in store.items()
        },
    }
    if extra:
        doc.update(extra)
    return doc


def save_checkpoint(path, store, seed, config, extra=None):
    doc = to_checkpoint(store, seed, config, extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=False)
    return doc


def read_checkpoint(path):
    with open(path) as fh:
        doc = json.load(fh)
    meta = doc.get("metadata", {})
    if meta.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {meta.get('format_version')!r}")
    if config_hash(doc["config"]) != meta["config_hash"]:
        raise ValueError("checkpoint config hash does not match its config block")
    state = {
        name: np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in doc["params"].items()
    }
    return doc, state


def file_hash(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
