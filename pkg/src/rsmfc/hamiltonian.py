"""Hamiltonians, their derivatives and the adjoint transform.

Adjoint components are indexed ``q[i][j]`` with ``i`` the state component
(``rho``, ``x``, and ``xi`` for the augmented system) and ``j`` the Brownian
component (``Y``, ``W``).  The risk-sensitive Hamiltonian is

    H^theta = c p2 - f + tr(G^T (q + theta p ell^T)),   G = [[rho beta, 0], [alpha, sigma]],

so the alpha term pairs ``q21`` with ``theta p2 ell1``.  With this pairing
``theta v H^theta`` evaluated at the transformed adjoints equals the
augmented Hamiltonian at the original ones.

All functions broadcast: scalars for single probes, arrays for ensembles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import LqSpec, ModelSpec
from .riccati import RiccatiSolution


@dataclass
class AdjointState:
    """``p`` has shape ``(2, ...)``, ``q`` ``(2, 2, ...)``, ``ell`` ``(2, ...)``."""

    p: np.ndarray
    q: np.ndarray
    ell: np.ndarray
    v: float | np.ndarray = 1.0

    def __post_init__(self):
        self.p = np.asarray(self.p, float)
        self.q = np.asarray(self.q, float)
        self.ell = np.asarray(self.ell, float)
        if np.any(np.asarray(self.v) <= 0):
            raise ValueError("v must be positive")


def _theta(model, theta):
    return model.theta if theta is None else theta


def eval_H_rs(model: ModelSpec, t, rho, x, m, u, adj: AdjointState, theta=None):
    """Risk-sensitive Hamiltonian."""
    th = _theta(model, theta)
    (p1, p2), q, (l1, l2) = adj.p, adj.q, adj.ell
    return (model.c(t, x, m, u) * p2 - model.run_cost_f(t, x, m, u)
            + rho * model.obs_beta(t, x) * (q[0, 0] + th * l1 * p1)
            + model.diff_alpha(t, x, m) * (q[1, 0] + th * l1 * p2)
            + model.diff_sigma(t, x, m) * (q[1, 1] + th * l2 * p2))


def eval_H_rn(model: ModelSpec, t, rho, x, m, u, p, q):
    """Risk-neutral Hamiltonian ``<F, p> + tr(G^T q) - f``."""
    p1, p2 = np.asarray(p, float)
    q = np.asarray(q, float)
    return (model.c(t, x, m, u) * p2 - model.run_cost_f(t, x, m, u)
            + rho * model.obs_beta(t, x) * q[0, 0]
            + model.diff_alpha(t, x, m) * q[1, 0]
            + model.diff_sigma(t, x, m) * q[1, 1])


def eval_H_aug(model: ModelSpec, t, rho, x, m, u, p, q):
    """Hamiltonian of the system augmented with the running cost ``xi``.

    ``p`` has three components and ``q`` is 3x2; the ``xi`` row of ``q``
    does not enter because ``xi`` has no diffusion.
    """
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    return (model.c(t, x, m, u) * p[1] + model.run_cost_f(t, x, m, u) * p[2]
            + model.diff_sigma(t, x, m) * q[1, 1]
            + rho * model.obs_beta(t, x) * q[0, 0]
            + model.diff_alpha(t, x, m) * q[1, 0])


def eval_H_rs_partials(model: ModelSpec, t, rho, x, m, u, adj: AdjointState, theta=None):
    """``(H_x, H_m, H_rho)`` of the risk-sensitive Hamiltonian."""
    th = _theta(model, theta)
    P = model.partials
    (p1, p2), q, (l1, l2) = adj.p, adj.q, adj.ell
    k_rho = q[0, 0] + th * l1 * p1
    k_alpha = q[1, 0] + th * l1 * p2
    k_sigma = q[1, 1] + th * l2 * p2
    H_x = (model.c_x(t, x, m, u) * p2 - P["f_x"](t, x, m, u)
           + rho * P["beta_x"](t, x) * k_rho
           + P["alpha_x"](t, x, m) * k_alpha + P["sigma_x"](t, x, m) * k_sigma)
    H_m = (model.c_m(t, x, m, u) * p2 - P["f_m"](t, x, m, u)
           + P["alpha_m"](t, x, m) * k_alpha + P["sigma_m"](t, x, m) * k_sigma)
    H_rho = model.obs_beta(t, x) * k_rho
    return H_x, H_m, H_rho


def transform_adjoint(p, q, v, ell, theta):
    """``p_hat = p / (theta v)``, ``q_hat = q / (theta v) - theta p_hat ell^T``.

    Trailing axes (after the component axes) are probe axes and broadcast.
    """
    if np.any(np.asarray(v) <= 0):
        raise ValueError("v must be positive")
    if theta == 0:
        raise ValueError("theta must be nonzero")
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    ell = np.asarray(ell, float)
    scale = theta * v
    p_hat = p / scale
    q_hat = q / scale - theta * p_hat[:, None] * ell[None, :]
    return p_hat, q_hat


def inverse_transform_adjoint(p_hat, q_hat, v, ell, theta):
    if np.any(np.asarray(v) <= 0):
        raise ValueError("v must be positive")
    p_hat = np.asarray(p_hat, float)
    scale = theta * v
    ell = np.asarray(ell, float)
    q = scale * (np.asarray(q_hat, float) + theta * p_hat[:, None] * ell[None, :])
    return scale * p_hat, q


@dataclass
class LqAdjointPath:
    """Closed-form adjoints along simulated paths, arrays ``(N, n+1)``."""

    p1: np.ndarray
    p2: np.ndarray
    q11: np.ndarray
    q12: np.ndarray
    q21: np.ndarray
    q22: np.ndarray


def lq_adjoints(spec: LqSpec, sol: RiccatiSolution, rho, x) -> LqAdjointPath:
    """``p1 = -lambda / rho``, ``p2 = -gamma x``, ``q11 = beta lambda x / rho``,
    ``q12 = 0``, ``q21 = -alpha gamma``, ``q22 = -sigma gamma``.

    ``rho`` and ``x`` are ``(N, n+1)`` path arrays on the solution's grid
    (or any arrays whose last axis is the grid).
    """
    rho = np.asarray(rho, float)
    x = np.asarray(x, float)
    g = sol.gamma
    lam = sol.lam
    s = 1.0 / rho
    return LqAdjointPath(
        p1=-lam * s,
        p2=-g * x,
        q11=spec.beta * lam * x * s,
        q12=np.zeros_like(x),
        q21=np.broadcast_to(-spec.alpha * g, x.shape).copy(),
        q22=np.broadcast_to(-spec.sigma * g, x.shape).copy(),
    )


def lq_adjoint_state(spec: LqSpec, sol: RiccatiSolution, k: int, rho, x) -> AdjointState:
    """Adjoints and ansatz loadings at node ``k`` for an ensemble of particles."""
    rho = np.asarray(rho, float)
    x = np.asarray(x, float)
    g = sol.gamma[k]
    xi1, xi2 = sol.xi()
    p = np.stack([-sol.lam / rho, -g * x])
    zero = np.zeros_like(x)
    q = np.stack([np.stack([spec.beta * sol.lam * x / rho, zero]),
                  np.stack([zero - spec.alpha * g, zero - spec.sigma * g])])
    ell = np.stack([xi1[k] * x, xi2[k] * x])
    return AdjointState(p=p, q=q, ell=ell, v=1.0)


def lq_control(spec: LqSpec, sol: RiccatiSolution, filter_mean, k: int, gain_scale: float = 1.0):
    """Feedback ``u = -b gamma(t_k) E[x | F^Y]`` clamped to ``[u_lo, u_hi]``.

    Returns ``(u, clamped)``.
    """
    raw = -spec.b_gain * gain_scale * sol.gamma[k] * np.asarray(filter_mean, float)
    u = np.clip(raw, spec.u_lo, spec.u_hi)
    return u, np.asarray(u != raw)


@dataclass
class BsdeCheck:
    """``Z = log(v) / theta - int f ds`` and its terminal mismatch per path."""

    Z: np.ndarray
    terminal_residual: np.ndarray

    @property
    def mean_abs_residual(self) -> float:
        return float(np.mean(np.abs(self.terminal_residual)))

    @property
    def mean_residual(self) -> float:
        return float(np.mean(self.terminal_residual))


def bsde_consistency(model: ModelSpec, traj, vpath) -> BsdeCheck:
    """Logarithmic transform of ``v`` checked against the quadratic BSDE's terminal value."""
    th = vpath.theta
    Z = vpath.log_v / th - traj.xi
    target = traj.log_rho[:, -1] / th + model.term_cost_h(traj.x[:, -1], traj.m[-1])
    return BsdeCheck(Z=Z, terminal_residual=Z[:, -1] - target)
