"""Global occupancy density / mean velocity grids and agent-aligned local crops."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels

CROP_SIZE = 32


@dataclass
class ContextMap:
    """Rasterized context for one scene.

    Row ``i`` / column ``j`` covers world ``y in [oy + i*cell, oy + (i+1)*cell)``
    and ``x in [ox + j*cell, ox + (j+1)*cell)``.
    """

    origin: np.ndarray
    cell_size: float
    density: np.ndarray
    velocity: np.ndarray
    counts: np.ndarray
    empty: bool = False
    provenance: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.density.shape

    def stacked(self):
        """(H_g, W_g, 3) grid: density then velocity components."""
        return np.concatenate([self.density[..., None], self.velocity], axis=-1)


def bounds_for(trajectories, margin=20.0):
    xy = np.concatenate([tr.xy for tr in trajectories])
    lo = np.floor(xy.min(axis=0) - margin)
    hi = np.ceil(xy.max(axis=0) + margin)
    return lo, hi


def build_global(trajectories, bounds=None, cell_size=1.0, provenance=None):
    """Histogram agent positions into normalized density and mean velocity grids.

    ``trajectories`` are :class:`AgentTrajectory` objects; velocities are
    ``v * (cos psi, sin psi)``. ``provenance`` records which split built the
    map; pass ``{"split": "train"}`` when building from training data.
    """
    if bounds is None:
        bounds = bounds_for(trajectories) if trajectories else (np.zeros(2), np.ones(2))
    lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
    W = int(np.ceil((hi[0] - lo[0]) / cell_size))
    H = int(np.ceil((hi[1] - lo[1]) / cell_size))
    counts = np.zeros((H, W), dtype=np.int64)
    vsum = np.zeros((H, W, 2))
    for tr in trajectories:
        j = np.floor((tr.x - lo[0]) / cell_size).astype(np.int64)
        i = np.floor((tr.y - lo[1]) / cell_size).astype(np.int64)
        if np.any((i < 0) | (i >= H) | (j < 0) | (j >= W)):
            raise ValueError(f"agent {tr.agent_id} leaves the map bounds {lo}..{hi}")
        np.add.at(counts, (i, j), 1)
        vel = np.stack([tr.v * np.cos(tr.psi), tr.v * np.sin(tr.psi)], axis=-1)
        np.add.at(vsum, (i, j), vel)
    total = counts.sum()
    empty = total == 0
    if empty:
        warnings.warn("context map built from zero observations; density is all zero", RuntimeWarning)
        density = np.zeros((H, W))
    else:
        density = counts / total
    with np.errstate(invalid="ignore", divide="ignore"):
        velocity = np.where(counts[..., None] > 0, vsum / np.maximum(counts, 1)[..., None], 0.0)
    return ContextMap(lo, float(cell_size), density, velocity, counts, bool(empty), dict(provenance or {}))


def extract_local(cmap, position, heading, H=CROP_SIZE, W=CROP_SIZE, impl=None):
    """Agent-centred crop aligned with ``heading`` -> (H, W, 3).

    Crop cell ``(r, c)`` sits at local offset ``((c - W//2), (r - H//2))``
    cells, with local +x along the heading. Velocity vectors are rotated into
    the local frame; samples off the map read zero.
    """
    return extract_many(cmap, np.asarray(position)[None], np.asarray([heading]), H, W, impl)[0]


def extract_many(cmap, positions, headings, H=CROP_SIZE, W=CROP_SIZE, impl=None):
    """Vectorized :func:`extract_local` over (M, 2) positions -> (M, H, W, 3)."""
    if H <= 0 or W <= 0:
        raise ValueError("crop size must be positive")
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    headings = np.asarray(headings, dtype=np.float64).reshape(-1)
    crops = kernels.bilinear_sample(cmap.stacked(), cmap.origin, cmap.cell_size, positions, headings, H, W, impl=impl)
    c = np.cos(headings)[:, None, None]
    s = np.sin(headings)[:, None, None]
    vx, vy = crops[..., 1].copy(), crops[..., 2].copy()
    crops[..., 1] = c * vx + s * vy
    crops[..., 2] = -s * vx + c * vy
    return crops


def save_map(path_prefix, cmap):
    """Write ``<prefix>.bin`` (little-endian float64, row-major H_g x W_g x 3) and ``<prefix>.json``."""
    grid = np.ascontiguousarray(cmap.stacked(), dtype="<f8")
    with open(f"{path_prefix}.bin", "wb") as fh:
        fh.write(grid.tobytes(order="C"))
    meta = {
        "origin": [float(v) for v in cmap.origin],
        "cell_size": cmap.cell_size,
        "H_g": int(cmap.shape[0]),
        "W_g": int(cmap.shape[1]),
        "channels": ["density", "velocity_x", "velocity_y"],
        "counts": cmap.counts.ravel().tolist(),
        "provenance": cmap.provenance,
    }
    with open(f"{path_prefix}.json", "w") as fh:
        json.dump(meta, fh)


def load_map(path_prefix):
    with open(f"{path_prefix}.json") as fh:
        meta = json.load(fh)
    H, W = meta["H_g"], meta["W_g"]
    grid = np.fromfile(f"{path_prefix}.bin", dtype="<f8").reshape(H, W, 3)
    counts = np.asarray(meta.get("counts", np.zeros(H * W)), dtype=np.int64).reshape(H, W)
    return ContextMap(np.asarray(meta["origin"]), float(meta["cell_size"]), grid[..., 0].copy(),
                      grid[..., 1:].copy(), counts, bool(counts.sum() == 0), meta.get("provenance", {}))


def build_scene_maps(samples, cell_size=1.0, margin=40.0):
    """One map per ``scene_id`` from the given (training) samples."""
    by_scene = {}
    for s in samples:
        by_scene.setdefault(s.scene_id, []).extend(s.trajectories)
    return {
        sid: build_global(trs, bounds_for(trs, margin), cell_size, provenance={"split": "train", "scene_id": sid})
        for sid, trs in sorted(by_scene.items())
    }
