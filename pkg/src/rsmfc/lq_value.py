"""Exact risk-sensitive cost of linear filter-feedback policies in the LQ model.

Under the physical measure the pair ``z = (x, pi)`` driven by a linear
filter and the feedback ``u = -k(t) pi + d(t)`` is a linear SDE

    dz = (M z + e d) dt + N dB,

and ``E exp(theta [int u^2/2 dt + x(T)^2/2])`` is exponential-quadratic,
``exp(z0' P z0 / 2 + s' z0 + r)``, with

    -P' = M'P + PM + P NN' P + theta diag(0, k^2),          P(T) = theta diag(1, 0)
    -s' = M's + P e d + P NN' s - theta k d (0, 1)',        s(T) = 0
    -r' = s'e d + tr(N'PN)/2 + s'NN's/2 + theta d^2/2,      r(T) = 0.

Everything is integrated with ``scipy.integrate.solve_ivp`` on continuous
time, so this is an oracle independent of the grid-based solvers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .model import LqSpec


def _gamma_fn(spec: LqSpec, case: int):
    c, b, al, be, sg, th = spec.c, spec.b_gain, spec.alpha, spec.beta, spec.sigma, spec.theta
    if case == 1:
        k0, k1, k2 = be - be * be / th, 2.0 * c + th * (al + sg), -b * b
    else:
        k0, k1, k2 = -be * be / th, 2.0 * c + be, th * (al + sg) - b * b
    sol = solve_ivp(lambda t, g: -(k0 + k1 * g + k2 * g * g), [spec.horizon_T, 0.0], [1.0],
                    dense_output=True, rtol=1e-12, atol=1e-13)
    return lambda t: float(sol.sol(t)[0])


def _variance_fn(spec: LqSpec, case: int, gamma):
    c, al, sg, th = spec.c, spec.alpha, spec.sigma, spec.theta

    def rhs(t, V):
        xi = 1.0 if case == 1 else gamma(t)
        A = c + th * (sg + al) * xi
        return 2 * A * V + sg * sg + al * al - (al + th * xi * V) ** 2

    sol = solve_ivp(rhs, [0.0, spec.horizon_T], [0.0], dense_output=True, rtol=1e-12, atol=1e-14)
    return lambda t: float(sol.sol(t)[0])


@dataclass
class LqValue:
    j_theta: float
    P0: np.ndarray
    s0: np.ndarray
    r0: float


def _value_ode(spec: LqSpec, case: int, form: str, gain_scale: float, needle):
    c, b, al, be, sg, th = spec.c, spec.b_gain, spec.alpha, spec.beta, spec.sigma, spec.theta
    a, T = spec.a, spec.horizon_T
    gamma = _gamma_fn(spec, case)

    def xi(t):
        return 1.0 if case == 1 else gamma(t)

    def A(t):
        return c + th * (sg + al) * xi(t)

    var = _variance_fn(spec, case, gamma)
    e = np.array([b, b])
    tau, eps, delta = needle if needle is not None else (0.0, 0.0, 0.0)

    def rhs(t, y):
        P = y[:4].reshape(2, 2)
        s = y[4:6]
        V = var(t)
        k = b * gain_scale * gamma(t)
        h = th * xi(t)
        if form == "scaled-gain":
            K, g = c, al * (1.0 + th * xi(t) * V)
        else:
            K, g = A(t), al + th * xi(t) * V
        M = np.array([[a, -b * k], [g * be, K - b * k - g * h]])
        N = np.array([[al, sg], [g, 0.0]])
        NN = N @ N.T
        d = delta if tau <= t < tau + eps else 0.0
        dP = -(M.T @ P + P @ M + P @ NN @ P + th * np.diag([0.0, k * k]))
        ds = -(M.T @ s + P @ e * d + P @ NN @ s - th * k * d * np.array([0.0, 1.0]))
        dr = -(s @ e * d + 0.5 * np.trace(N.T @ P @ N) + 0.5 * s @ NN @ s + 0.5 * th * d * d)
        return np.r_[dP.ravel(), ds, dr]

    y_T = np.r_[th, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
    max_step = eps / 10 if needle is not None else np.inf
    return solve_ivp(rhs, [T, 0.0], y_T, rtol=1e-10, atol=1e-12, max_step=max_step,
                     dense_output=True)


def lq_policy_value(spec: LqSpec, case: int, form: str = "scaled-gain", gain_scale: float = 1.0,
                    needle=None) -> LqValue:
    """Exact ``J^theta`` of the filter-feedback policy (Gaussian-ODE variance)."""
    out = _value_ode(spec, case, form, gain_scale, needle)
    P0 = out.y[:4, -1].reshape(2, 2)
    s0 = out.y[4:6, -1]
    r0 = float(out.y[6, -1])
    z0 = np.array([spec.x0, spec.x0])
    return LqValue(float(np.exp(0.5 * z0 @ P0 @ z0 + s0 @ z0 + r0)), P0, s0, r0)


def exact_loadings(spec: LqSpec, case: int, times, filter_mean, form: str = "scaled-gain"):
    """Loadings of ``v = E[psi | F_t]`` for the unperturbed feedback policy.

    ``log v = log rho + theta xi + z'Pz/2 + r``, so its martingale part gives
    ``theta ell = (beta x, 0) + N' P z`` with ``z = (x, pi)``.  ``filter_mean``
    is the ``(N, n+1)`` array of per-path filter means along the simulation.
    Returns a callable ``ell(k, t, x)``.
    """
    al, be, sg, th = spec.alpha, spec.beta, spec.sigma, spec.theta
    out = _value_ode(spec, case, form, 1.0, None)
    P = out.sol(np.asarray(times, float))[:4].T.reshape(-1, 2, 2)
    gamma = _gamma_fn(spec, case)
    var = _variance_fn(spec, case, gamma)
    gains = []
    for t in times:
        xi1 = 1.0 if case == 1 else gamma(t)
        V = var(t)
        gains.append(al * (1.0 + th * xi1 * V) if form == "scaled-gain" else al + th * xi1 * V)
    gains = np.asarray(gains)

    def ell(k, t, x):
        pi = filter_mean[:, k]
        Pz1 = P[k, 0, 0] * x + P[k, 0, 1] * pi
        Pz2 = P[k, 1, 0] * x + P[k, 1, 1] * pi
        l1 = (be * x + al * Pz1 + gains[k] * Pz2) / th
        l2 = sg * Pz1 / th
        return l1, l2

    return ell
