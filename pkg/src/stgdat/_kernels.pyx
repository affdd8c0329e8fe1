# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: bicycle rollouts, particle propagation, bilinear crops.

Signatures mirror :mod:`stgdat._kernels_py`; callers go through
:mod:`stgdat.kernels`, which picks this module when it is importable.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, floor

cnp.import_array()


def bicycle_rollout(double[:, ::1] state0, double[:, :, ::1] controls, double dt, double l_r):
    cdef Py_ssize_t n = state0.shape[0], steps = controls.shape[1], i, k
    out_arr = np.empty((n, steps + 1, 5))
    cdef double[:, :, ::1] out = out_arr
    cdef double x, y, psi, v, beta, a, bdot, gam
    for i in range(n):
        x = state0[i, 0]; y = state0[i, 1]; psi = state0[i, 2]; v = state0[i, 3]; beta = state0[i, 4]
        out[i, 0, 0] = x; out[i, 0, 1] = y; out[i, 0, 2] = psi; out[i, 0, 3] = v; out[i, 0, 4] = beta
        for k in range(steps):
            a = controls[i, k, 0]
            bdot = controls[i, k, 1]
            gam = psi + beta
            x = x + v * cos(gam) * dt
            y = y + v * sin(gam) * dt
            psi = psi + (v / l_r) * sin(beta) * dt
            v = v + a * dt
            beta = beta + bdot * dt
            out[i, k + 1, 0] = x; out[i, k + 1, 1] = y; out[i, k + 1, 2] = psi
            out[i, k + 1, 3] = v; out[i, k + 1, 4] = beta
    return out_arr


def mc_step(double[:, ::1] particles, double[::1] mu_u, double[:, ::1] chol, double[:, ::1] eps,
            double a_max, double bdot_max, double dt, double l_r):
    """Advance particles in place by one step with sampled, clipped controls."""
    cdef Py_ssize_t n = particles.shape[0], i
    cdef double x, y, psi, v, beta, a, bdot, gam
    cdef double l00 = chol[0, 0], l10 = chol[1, 0], l11 = chol[1, 1]
    for i in range(n):
        a = mu_u[0] + l00 * eps[i, 0]
        bdot = mu_u[1] + l10 * eps[i, 0] + l11 * eps[i, 1]
        if a > a_max:
            a = a_max
        elif a < -a_max:
            a = -a_max
        if bdot > bdot_max:
            bdot = bdot_max
        elif bdot < -bdot_max:
            bdot = -bdot_max
        x = particles[i, 0]; y = particles[i, 1]; psi = particles[i, 2]; v = particles[i, 3]; beta = particles[i, 4]
        gam = psi + beta
        particles[i, 0] = x + v * cos(gam) * dt
        particles[i, 1] = y + v * sin(gam) * dt
        particles[i, 2] = psi + (v / l_r) * sin(beta) * dt
        particles[i, 3] = v + a * dt
        particles[i, 4] = beta + bdot * dt


def bilinear_sample(double[:, :, ::1] grid, double origin_x, double origin_y, double cell,
                    double[:, ::1] centers, double[::1] headings, Py_ssize_t H, Py_ssize_t W):
    """Sample agent-aligned H x W crops; crop cell (r, c) sits at local (c - W//2, r - H//2) cells."""
    cdef Py_ssize_t m = centers.shape[0], Hg = grid.shape[0], Wg = grid.shape[1], C = grid.shape[2]
    cdef Py_ssize_t idx, r, c, ch, i0, j0, i1, j1
    out_arr = np.zeros((m, H, W, C))
    cdef double[:, :, :, ::1] out = out_arr
    cdef double ch_, sh, lx, ly, wx, wy, gi, gj, fi, fj, w00, w01, w10, w11
    for idx in range(m):
        ch_ = cos(headings[idx])
        sh = sin(headings[idx])
        for r in range(H):
            ly = (r - H // 2) * cell
            for c in range(W):
                lx = (c - W // 2) * cell
                wx = centers[idx, 0] + ch_ * lx - sh * ly
                wy = centers[idx, 1] + sh * lx + ch_ * ly
                # continuous grid coordinates with cell centers on integers
                gj = (wx - origin_x) / cell - 0.5
                gi = (wy - origin_y) / cell - 0.5
                fi = floor(gi)
                fj = floor(gj)
                i0 = <Py_ssize_t>fi
                j0 = <Py_ssize_t>fj
                i1 = i0 + 1
                j1 = j0 + 1
                fi = gi - fi
                fj = gj - fj
                w00 = (1.0 - fi) * (1.0 - fj)
                w01 = (1.0 - fi) * fj
                w10 = fi * (1.0 - fj)
                w11 = fi * fj
                for ch in range(C):
                    if 0 <= i0 < Hg and 0 <= j0 < Wg:
                        out[idx, r, c, ch] += w00 * grid[i0, j0, ch]
                    if 0 <= i0 < Hg and 0 <= j1 < Wg:
                        out[idx, r, c, ch] += w01 * grid[i0, j1, ch]
                    if 0 <= i1 < Hg and 0 <= j0 < Wg:
                        out[idx, r, c, ch] += w10 * grid[i1, j0, ch]
                    if 0 <= i1 < Hg and 0 <= j1 < Wg:
                        out[idx, r, c, ch] += w11 * grid[i1, j1, ch]
    return out_arr
