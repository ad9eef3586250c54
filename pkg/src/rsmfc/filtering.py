"""Conditional expectations given the observation record.

The particle filter works under the reference measure, where ``Y`` is a
Brownian motion carrying no information, and reweights particles by the
tilting density ``L`` (optionally times ``rho``).  The ``W``-part of ``L``
is absorbed into the proposal: particles see ``dW = theta ell_2 dt + dW'``,
so only the ``Y``-part enters the weights.

The closed-form recursion is the scalar filter SDE for the LQ model; the
conditional variance it needs either comes from the particle filter or from
the Gaussian variance ODE

    V' = 2 A V + sigma^2 + alpha^2 - (alpha + theta xi_1 V)^2,
    A  = c + theta (sigma xi_2 + alpha xi_1),   V(0) = 0,

which is the exact conditional variance of the state under the tilted
measure when the loadings are ``ell = (xi_1 x, xi_2 x)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import LqSpec, ModelSpec, TimeGrid
from .riccati import RiccatiSolution
from .sde import _seed_sequence, generate_drivers

FORMS = ("scaled-gain", "kalman")
VARIANCE_SOURCES = ("gaussian-ode", "particle")
_RESAMPLE_STREAM = 2**31 - 1


class FilterDegeneracyError(RuntimeError):
    pass


@dataclass
class ParticleCloud:
    """Per-node particle states and normalised weights (before resampling)."""

    x: np.ndarray
    log_rho: np.ndarray
    weights: np.ndarray
    resampled: np.ndarray


@dataclass
class FilterEstimate:
    mean: np.ndarray
    variance: np.ndarray
    ess: np.ndarray | None
    n_particles: int
    se: np.ndarray | None = None
    controls: np.ndarray | None = None
    cloud: ParticleCloud | None = None


def weighted_moments(x: np.ndarray, w: np.ndarray) -> tuple[float, float, float]:
    """Mean, variance and standard error of the mean for normalised weights.

    The mean is accumulated relative to the first particle, so an ensemble
    of identical values returns that value exactly.
    """
    ref = x[0]
    d = x - ref
    mean = ref + float(np.dot(w, d))
    dev = x - mean
    var = float(np.dot(w, dev * dev))
    se = float(np.sqrt(np.dot(w * w, dev * dev)))
    return mean, var, se


def systematic_resample(w: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = w.size
    positions = (rng.random() + np.arange(n)) / n
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, positions, side="right")


def particle_filter(model: ModelSpec, ell, y_path, n_particles: int, seed,
                    control=None, include_density: bool = False, m_path=None,
                    resample_threshold: float = 0.5, min_ess: float = 10.0,
                    keep_cloud: bool = False) -> FilterEstimate:
    """Weighted particle estimate of ``E[x(t) | F^Y_t]`` under the tilted measure.

    ``ell(k, t, x)`` gives the loadings; ``control(k, t, mean, var)`` returns
    the common control applied to every particle (zero if omitted).
    ``m_path`` supplies the mean-field input per node; when omitted it is NaN,
    so a model that actually depends on ``m`` fails loudly.
    """
    y_path = np.asarray(y_path, float)
    n = y_path.size
    N = int(n_particles)
    if N < 1:
        raise ValueError("n_particles must be at least 1")
    grid = TimeGrid(n, model.horizon_T)
    times, dt, th = grid.times, grid.dt, model.theta
    noise = generate_drivers(grid, N, seed).dW
    rng = np.random.Generator(np.random.Philox(_seed_sequence(seed, _RESAMPLE_STREAM)))
    lo_u, hi_u = model.u_bounds

    x = np.full(N, float(model.x0))
    log_rho = np.zeros(N)
    log_w = np.zeros(N)
    mean = np.empty(n + 1)
    var = np.empty(n + 1)
    se = np.empty(n + 1)
    ess = np.empty(n + 1)
    controls = np.empty(n)
    if keep_cloud:
        cx, cr, cw = (np.empty((n + 1, N)) for _ in range(3))
        flags = np.zeros(n + 1, dtype=bool)
    for k in range(n + 1):
        w = np.exp(log_w - log_w.max())
        w /= w.sum()
        mean[k], var[k], se[k] = weighted_moments(x, w)
        ess[k] = 1.0 / np.dot(w, w)
        if keep_cloud:
            cx[k], cr[k], cw[k] = x, log_rho, w
        if k == n:
            break
        if ess[k] < min_ess and N > min_ess:
            raise FilterDegeneracyError(f"effective sample size {ess[k]:.3g} at step {k} (t={times[k]:.4g})")
        if ess[k] < resample_threshold * N:
            idx = systematic_resample(w, rng)
            x, log_rho = x[idx], log_rho[idx]
            log_w = np.zeros(N)
            if keep_cloud:
                flags[k] = True
        t = times[k]
        u = 0.0 if control is None else float(control(k, t, mean[k], var[k]))
        u = min(max(u, lo_u), hi_u)
        controls[k] = u
        m = np.nan if m_path is None else float(m_path[k])
        l1, l2 = ell(k, t, x)
        beta = model.obs_beta(t, x)
        alpha = model.diff_alpha(t, x, m)
        sigma = model.diff_sigma(t, x, m)
        dy = y_path[k]
        drift = model.drift_b(t, x, m, u) - alpha * beta + sigma * th * l2
        x = x + drift * dt + sigma * noise[:, k] + alpha * dy
        log_w = log_w + th * l1 * dy - 0.5 * th * th * l1 * l1 * dt
        d_log_rho = beta * dy - 0.5 * beta * beta * dt
        log_rho = log_rho + d_log_rho
        if include_density:
            log_w = log_w + d_log_rho
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(log_w))):
            raise FloatingPointError(f"non-finite particle state at step {k + 1}")
    cloud = ParticleCloud(cx, cr, cw, flags) if keep_cloud else None
    return FilterEstimate(mean=mean, variance=var, ess=ess, n_particles=N, se=se,
                          controls=controls, cloud=cloud)


def _on_grid(fn_or_array, times, default):
    if fn_or_array is None:
        return default
    if callable(fn_or_array):
        return np.array([float(fn_or_array(t)) for t in times])
    arr = np.asarray(fn_or_array, float)
    if arr.shape != times.shape:
        raise ValueError("loading array must have one value per grid node")
    return arr


def gaussian_variance(spec: LqSpec, grid: TimeGrid, xi1, xi2) -> np.ndarray:
    """Heun integration of the conditional-variance ODE on the grid."""
    c, al, sg, th = spec.c, spec.alpha, spec.sigma, spec.theta
    dt = grid.dt

    def rhs(k, V):
        A = c + th * (sg * xi2[k] + al * xi1[k])
        g = al + th * xi1[k] * V
        return 2.0 * A * V + sg * sg + al * al - g * g

    V = np.empty(grid.n_steps + 1)
    V[0] = 0.0
    for k in range(grid.n_steps):
        s0 = rhs(k, V[k])
        pred = V[k] + dt * s0
        V[k + 1] = max(V[k] + 0.5 * dt * (s0 + rhs(k + 1, pred)), 0.0)
    return V


@dataclass(frozen=True)
class FilterCoefficients:
    """Per-node coefficients of ``dpi = (K pi + b u) dt + g (dY - h pi dt)``."""

    K: np.ndarray
    gain: np.ndarray
    h: np.ndarray
    variance: np.ndarray
    form: str


def filter_coefficients(spec: LqSpec, sol: RiccatiSolution, form: str = "scaled-gain",
                        variance=None, xi1=None, xi2=None) -> FilterCoefficients:
    """Coefficients of the LQ filter recursion.

    ``form="scaled-gain"`` is the recursion with the effective drift ``c`` and a scaled gain
    ``dpi = (c - b^2 gamma) pi dt + alpha (1 + theta [pi(x l1) - pi(x) pi(l1)]) dY~``;
    ``form="kalman"`` is the Kalman-Bucy filter of the tilted linear model,
    whose drift carries the Girsanov shift ``theta (sigma xi_2 + alpha xi_1)``
    and whose gain is ``alpha + theta xi_1 V``.
    """
    if form not in FORMS:
        raise ValueError(f"form must be one of {FORMS}, got {form!r}")
    times = sol.grid.times
    d1, d2 = sol.xi()
    xi1 = _on_grid(xi1, times, d1)
    xi2 = _on_grid(xi2, times, d2)
    V = gaussian_variance(spec, sol.grid, xi1, xi2) if variance is None else np.asarray(variance, float)
    if V.shape != times.shape:
        raise ValueError("variance must have one value per grid node")
    th, al = spec.theta, spec.alpha
    h = th * xi1
    if form == "scaled-gain":
        K = np.full_like(times, spec.c)
        gain = al * (1.0 + th * xi1 * V)
    else:
        K = spec.c + th * (spec.sigma * xi2 + al * xi1)
        gain = al + th * xi1 * V
    return FilterCoefficients(K=K, gain=gain, h=h, variance=V, form=form)


def filter_step(coeffs: FilterCoefficients, b: float, k: int, pi, u, dy, dt):
    return pi + (coeffs.K[k] * pi + b * u) * dt + coeffs.gain[k] * (dy - coeffs.h[k] * pi * dt)


def closed_form_filter(spec: LqSpec, sol: RiccatiSolution, y_path, xi1=None,
                       variance_source: str = "gaussian-ode", variance=None,
                       controls=None, form: str = "scaled-gain") -> FilterEstimate:
    """Euler recursion of the LQ filter SDE along one or several observation records.

    Without ``controls`` the feedback ``u = -b gamma pi`` of the filter's own
    estimate is applied; with ``controls`` (one value per step, or one row
    per record) the given control sequence enters the drift instead.
    """
    if variance_source not in VARIANCE_SOURCES:
        raise ValueError(f"variance_source must be one of {VARIANCE_SOURCES}")
    if variance_source == "particle" and variance is None:
        raise ValueError("variance_source='particle' needs the particle variance path")
    y = np.asarray(y_path, float)
    single = y.ndim == 1
    y = np.atleast_2d(y)
    n = sol.grid.n_steps
    if y.shape[1] != n:
        raise ValueError("observation record and Riccati grid differ in length")
    coeffs = filter_coefficients(spec, sol, form,
                                 variance if variance_source == "particle" else None, xi1=xi1)
    dt, b = sol.grid.dt, spec.b_gain
    if controls is not None:
        controls = np.broadcast_to(np.asarray(controls, float), y.shape)
    pi = np.empty((y.shape[0], n + 1))
    pi[:, 0] = spec.x0
    applied = np.empty(y.shape)
    for k in range(n):
        if controls is None:
            u = np.clip(-b * sol.gamma[k] * pi[:, k], spec.u_lo, spec.u_hi)
        else:
            u = controls[:, k]
        applied[:, k] = u
        pi[:, k + 1] = filter_step(coeffs, b, k, pi[:, k], u, y[:, k], dt)
    return FilterEstimate(mean=pi[0] if single else pi, variance=coeffs.variance, ess=None,
                          n_particles=0, controls=applied[0] if single else applied)
