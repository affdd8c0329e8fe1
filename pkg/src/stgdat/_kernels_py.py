"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``."""
from __future__ import annotations

import numpy as np


def bicycle_rollout(state0, controls, dt, l_r):
    state0 = np.ascontiguousarray(state0, dtype=np.float64)
    controls = np.ascontiguousarray(controls, dtype=np.float64)
    n, steps = controls.shape[0], controls.shape[1]
    out = np.empty((n, steps + 1, 5))
    out[:, 0] = state0
    x, y, psi, v, beta = (state0[:, i].copy() for i in range(5))
    for k in range(steps):
        gam = psi + beta
        x = x + v * np.cos(gam) * dt
        y = y + v * np.sin(gam) * dt
        psi = psi + (v / l_r) * np.sin(beta) * dt
        v = v + controls[:, k, 0] * dt
        beta = beta + controls[:, k, 1] * dt
        out[:, k + 1] = np.stack([x, y, psi, v, beta], axis=1)
    return out


def mc_step(particles, mu_u, chol, eps, a_max, bdot_max, dt, l_r):
    a = np.clip(mu_u[0] + chol[0, 0] * eps[:, 0], -a_max, a_max)
    bdot = np.clip(mu_u[1] + chol[1, 0] * eps[:, 0] + chol[1, 1] * eps[:, 1], -bdot_max, bdot_max)
    x, y, psi, v, beta = (particles[:, i].copy() for i in range(5))
    gam = psi + beta
    particles[:, 0] = x + v * np.cos(gam) * dt
    particles[:, 1] = y + v * np.sin(gam) * dt
    particles[:, 2] = psi + (v / l_r) * np.sin(beta) * dt
    particles[:, 3] = v + a * dt
    particles[:, 4] = beta + bdot * dt


def bilinear_sample(grid, origin_x, origin_y, cell, centers, headings, H, W):
    Hg, Wg, C = grid.shape
    ly = (np.arange(H) - H // 2) * cell
    lx = (np.arange(W) - W // 2) * cell
    LY, LX = np.meshgrid(ly, lx, indexing="ij")
    c = np.cos(headings)[:, None, None]
    s = np.sin(headings)[:, None, None]
    wx = centers[:, 0, None, None] + c * LX - s * LY
    wy = centers[:, 1, None, None] + s * LX + c * LY
    gj = (wx - origin_x) / cell - 0.5
    gi = (wy - origin_y) / cell - 0.5
    i0 = np.floor(gi)
    j0 = np.floor(gj)
    fi = gi - i0
    fj = gj - j0
    i0 = i0.astype(np.intp)
    j0 = j0.astype(np.intp)
    out = np.zeros(wx.shape + (C,))
    for di, dj, w in ((0, 0, (1 - fi) * (1 - fj)), (0, 1, (1 - fi) * fj),
                      (1, 0, fi * (1 - fj)), (1, 1, fi * fj)):
        ii = i0 + di
        jj = j0 + dj
        ok = (ii >= 0) & (ii < Hg) & (jj >= 0) & (jj < Wg)
        vals = np.zeros(wx.shape + (C,))
        vals[ok] = grid[ii[ok], jj[ok]]
        out += w[..., None] * vals
    return out
