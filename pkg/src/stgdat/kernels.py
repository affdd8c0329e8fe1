"""Kernel backend selection.

The compiled extension is used when it was built; set ``STGDAT_PURE_PYTHON=1``
to force the numpy fallback. ``BACKEND`` names the active choice.
"""
from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

if os.environ.get("STGDAT_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = _kernels_py

BACKEND = "cython" if _impl is not _kernels_py else "python"


def backends():
    """All importable backends keyed by name (for benchmarks and parity tests)."""
    found = {"python": _kernels_py}
    try:
        from . import _kernels

        found["cython"] = _kernels
    except ImportError:
        pass
    return found


def bicycle_rollout(state0, controls, dt, l_r, impl=None):
    """Integrate (N, 5) states through (N, T, 2) controls -> (N, T+1, 5)."""
    impl = impl or _impl
    state0 = np.ascontiguousarray(state0, dtype=np.float64).reshape(-1, 5)
    controls = np.ascontiguousarray(controls, dtype=np.float64).reshape(state0.shape[0], -1, 2)
    return impl.bicycle_rollout(state0, controls, float(dt), float(l_r))


def mc_step(particles, mu_u, chol, eps, a_max, bdot_max, dt, l_r, impl=None):
    """One in-place particle step with controls ``clip(mu_u + chol @ eps)``."""
    impl = impl or _impl
    impl.mc_step(particles, np.ascontiguousarray(mu_u, dtype=np.float64),
                 np.ascontiguousarray(chol, dtype=np.float64), np.ascontiguousarray(eps, dtype=np.float64),
                 float(a_max), float(bdot_max), float(dt), float(l_r))
    return particles


def bilinear_sample(grid, origin, cell, centers, headings, H, W, impl=None):
    impl = impl or _impl
    grid = np.ascontiguousarray(grid, dtype=np.float64)
    if grid.ndim == 2:
        grid = grid[:, :, None]
    centers = np.ascontiguousarray(centers, dtype=np.float64).reshape(-1, 2)
    headings = np.ascontiguousarray(headings, dtype=np.float64).reshape(-1)
    return impl.bilinear_sample(grid, float(origin[0]), float(origin[1]), float(cell), centers, headings,
                                int(H), int(W))
