"""Kinematic bicycle model, control saturation and uncertainty propagation.

State layout is ``(x, y, psi, v, beta)``; controls are ``(a, beta_dot)``.
``beta`` is the slip angle of the centre-of-mass velocity relative to the body
axis, so the direction of travel is ``psi + beta``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .nn import tensor as tt

X, Y, PSI, V, BETA = range(5)


@dataclass(frozen=True)
class BicycleParams:
    l_r: float = 1.5
    dt: float = 0.1
    a_max: float = 5.0
    bdot_max: float = 0.6

    def __post_init__(self):
        if self.l_r <= 0:
            raise ValueError("l_r must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.a_max <= 0 or self.bdot_max <= 0:
            raise ValueError("saturation bounds must be positive")

    @property
    def bounds(self):
        return np.array([self.a_max, self.bdot_max])


@dataclass
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.cov = np.asarray(self.cov, dtype=np.float64)


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    a = np.asarray(a, dtype=np.float64)
    w = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w) if w.ndim else (np.pi if w == -np.pi else float(w))


def bicycle_step(s, u, params):
    """Discrete bicycle update for a state (5,) or batch (N, 5)."""
    s = np.asarray(s, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(u))):
        raise ValueError("bicycle_step received a non-finite state or control")
    x, y, psi, v, beta = np.moveaxis(s, -1, 0)
    a, bdot = np.moveaxis(u, -1, 0)
    dt = params.dt
    gam = psi + beta
    return np.stack(
        [
            x + v * np.cos(gam) * dt,
            y + v * np.sin(gam) * dt,
            psi + (v / params.l_r) * np.sin(beta) * dt,
            v + a * dt,
            beta + bdot * dt,
        ],
        axis=-1,
    )


def bicycle_step_tensor(state, control, params):
    """:func:`bicycle_step` on a list of five (N,) tensors, differentiable."""
    x, y, psi, v, beta = state
    a, bdot = control
    dt = params.dt
    gam = psi + beta
    return [
        x + v * tt.cos(gam) * dt,
        y + v * tt.sin(gam) * dt,
        psi + v * tt.sin(beta) * (dt / params.l_r),
        v + a * dt,
        beta + bdot * dt,
    ]


def saturate(raw, params):
    """Smoothly bound raw ``(a, beta_dot)`` by ``bound * tanh(raw / bound)``."""
    bounds = params.bounds
    if isinstance(raw, tt.Tensor):
        return tt.tanh(raw * (1.0 / bounds)) * bounds
    raw = np.asarray(raw, dtype=np.float64)
    return bounds * np.tanh(raw / bounds)


def jacobians(s, params):
    """Partial derivatives of :func:`bicycle_step` w.r.t. state and control.

    Returns ``(Df_s, Df_u)`` of shapes (5, 5) and (5, 2). The position rows
    follow from differentiating ``v cos(psi + beta) dt``; with respect to ``v``
    this gives ``cos(psi + beta) dt``.
    """
    x, y, psi, v, beta = np.asarray(s, dtype=np.float64)
    dt, l_r = params.dt, params.l_r
    gam = psi + beta
    c, sg = np.cos(gam), np.sin(gam)
    Df_s = np.eye(5)
    Df_s[X, PSI] = -v * sg * dt
    Df_s[X, V] = c * dt
    Df_s[X, BETA] = -v * sg * dt
    Df_s[Y, PSI] = v * c * dt
    Df_s[Y, V] = sg * dt
    Df_s[Y, BETA] = v * c * dt
    Df_s[PSI, V] = np.sin(beta) * dt / l_r
    Df_s[PSI, BETA] = v * np.cos(beta) * dt / l_r
    Df_u = np.zeros((5, 2))
    Df_u[V, 0] = dt
    Df_u[BETA, 1] = dt
    return Df_s, Df_u


def _check_psd(m, name, tol=1e-10):
    m = np.asarray(m, dtype=np.float64)
    if not np.allclose(m, m.T, atol=tol * max(1.0, np.abs(m).max())):
        raise ValueError(f"{name} is not symmetric")
    w = np.linalg.eigvalsh(0.5 * (m + m.T))
    if w.min() < -tol * max(1.0, np.abs(w).max()):
        raise ValueError(f"{name} is not positive semidefinite (min eigenvalue {w.min():.3e})")


def symmetrize_psd(m):
    """Symmetrize and clip negative eigenvalues to zero."""
    m = 0.5 * (m + m.T)
    w, q = np.linalg.eigh(m)
    if w.min() >= 0:
        return m
    w = np.maximum(w, 0.0)
    out = (q * w) @ q.T
    return 0.5 * (out + out.T)


def propagate_gaussian(belief, mu_u, sigma_uu, params, check=True):
    """Linearized (EKF-style) propagation of a state Gaussian through one step.

    The mean goes through the nonlinear step; the covariance is
    ``Df_s S Df_s^T + Df_u U Df_u^T`` evaluated at the current mean.
    """
    sigma_uu = np.asarray(sigma_uu, dtype=np.float64)
    if check:
        _check_psd(belief.cov, "state covariance")
        _check_psd(sigma_uu, "control covariance")
    Df_s, Df_u = jacobians(belief.mean, params)
    mean = bicycle_step(belief.mean, mu_u, params)
    cov = Df_s @ belief.cov @ Df_s.T + Df_u @ sigma_uu @ Df_u.T
    return GaussianBelief(mean, symmetrize_psd(cov))


def _control_chol(sigma_uu):
    """Lower-triangular factor of a 2x2 PSD matrix (zero pivots allowed)."""
    s = np.asarray(sigma_uu, dtype=np.float64)
    l00 = np.sqrt(max(s[0, 0], 0.0))
    l10 = s[1, 0] / l00 if l00 > 0 else 0.0
    l11 = np.sqrt(max(s[1, 1] - l10 * l10, 0.0))
    return np.array([[l00, 0.0], [l10, l11]])


def propagate_monte_carlo(particles, mu_u, sigma_uu, rng, params, impl=None):
    """Step every particle with its own control drawn from N(mu_u, sigma_uu), clipped to bounds.

    ``particles`` is (P, 5); a new array is returned.
    """
    particles = np.array(particles, dtype=np.float64, copy=True).reshape(-1, 5)
    if len(particles) < 1:
        raise ValueError("need at least one particle")
    chol = _control_chol(sigma_uu)
    eps = rng.standard_normal((len(particles), 2))
    return kernels.mc_step(particles, mu_u, chol, eps, params.a_max, params.bdot_max, params.dt, params.l_r,
                           impl=impl)


def rollout(s0, controls, params):
    """Deterministic rollout of (T, 2) controls from one state -> (T+1, 5)."""
    return kernels.bicycle_rollout(np.asarray(s0)[None], np.asarray(controls)[None], params.dt, params.l_r)[0]


def initial_state_from_history(xy, v_last, l_r, dt, min_disp=1e-6, max_sin_beta=0.5, fallback_heading=0.0):
    """Estimate ``(x, y, psi, v, beta)`` at the last history step from positions.

    The travel direction and its rate come from the last two displacement
    vectors; a constant-rate turn then fixes the slip angle through
    ``gamma_dot = v / l_r * sin(beta)``. ``xy`` is (T_h, 2).
    """
    xy = np.asarray(xy, dtype=np.float64)
    v0 = float(v_last)
    disp = np.diff(xy, axis=0)
    norms = np.hypot(disp[:, 0], disp[:, 1]) if len(disp) else np.zeros(0)
    if len(disp) == 0 or norms[-1] < min_disp:
        return np.array([xy[-1, 0], xy[-1, 1], fallback_heading, v0, 0.0])
    th1 = np.arctan2(disp[-1, 1], disp[-1, 0])
    rate = 0.0
    if len(disp) >= 2 and norms[-2] >= min_disp:
        th0 = np.arctan2(disp[-2, 1], disp[-2, 0])
        rate = float(wrap_angle(th1 - th0)) / dt
    gam = th1 + rate * dt
    sb = 0.0 if abs(v0) < 1e-3 else np.clip(l_r * rate / v0, -max_sin_beta, max_sin_beta)
    beta = float(np.arcsin(sb))
    return np.array([xy[-1, 0], xy[-1, 1], gam - beta, v0, beta])
