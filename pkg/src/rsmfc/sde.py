"""Brownian drivers and Euler-Maruyama integration of the merged observed system.

Under the reference measure the observation ``Y`` and the state noise ``W``
are independent standard Brownian motions.  Each particle carries

    d rho = rho beta dY
    dx    = (b - alpha beta) dt + sigma dW + alpha dY
    d xi  = f dt

with the mean-field input ``m = E[rho x]`` replaced by the ensemble average,
frozen over each step.  ``rho`` (and ``v`` in :func:`evolve_vtheta`) are
updated in log space so they stay positive and the discrete processes are
exact martingales.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._parallel import run_chunks
from .model import ModelSpec, TimeGrid

PATH_BLOCK = 256
_LOG_MAX = np.log(np.finfo(float).max) - 1.0


@dataclass
class BrownianBundle:
    """Increments of ``(Y, W)`` for ``N`` paths; rows are paths, columns steps."""

    dW: np.ndarray
    dY: np.ndarray
    seed: object
    grid: TimeGrid

    @property
    def n_paths(self) -> int:
        return self.dW.shape[0]

    def subset(self, rows) -> "BrownianBundle":
        return BrownianBundle(self.dW[rows], self.dY[rows], self.seed, self.grid)


@dataclass
class EnsembleTrajectory:
    """Discretised particle paths.

    Arrays are ``(N, n+1)`` when paths are kept; with ``keep_paths=False``
    only the initial and terminal columns are stored (``times`` has two
    entries).  ``aux`` holds policy diagnostics such as the per-path filter
    mean, plus the full mean-field path ``m_path``.
    """

    grid: TimeGrid
    times: np.ndarray
    log_rho: np.ndarray
    x: np.ndarray
    xi: np.ndarray
    m: np.ndarray
    controls: np.ndarray
    aux: dict = field(default_factory=dict)

    @property
    def rho(self) -> np.ndarray:
        return np.exp(self.log_rho)

    @property
    def n_paths(self) -> int:
        return self.x.shape[0]


@dataclass
class MeanWithSE:
    mean: float
    se: float
    n: int

    @property
    def se_defined(self) -> bool:
        return self.n > 1

    def within(self, target: float, k: float = 3.0) -> bool:
        return abs(self.mean - target) <= k * self.se


@dataclass
class VPath:
    """Forward-evolved generic martingale ``v`` and ``L = v / v(0)``."""

    log_v: np.ndarray
    theta: float

    @property
    def v(self) -> np.ndarray:
        return np.exp(self.log_v)

    @property
    def L(self) -> np.ndarray:
        return np.exp(self.log_v - self.log_v[:, :1])


def _seed_sequence(seed, *stream) -> np.random.SeedSequence:
    entropy = list(seed) if isinstance(seed, (tuple, list)) else [int(seed)]
    return np.random.SeedSequence(entropy=entropy, spawn_key=tuple(stream))


def generate_drivers(grid: TimeGrid, n_paths: int, seed) -> BrownianBundle:
    """Independent N(0, dt) increments for ``Y`` and ``W``.

    Paths are drawn in fixed blocks of ``PATH_BLOCK`` from a counter-based
    generator keyed by ``(seed, block)``, so path ``i`` is the same whatever
    the ensemble size or worker count.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    n = grid.n_steps
    sd = np.sqrt(grid.dt)
    n_blocks = -(-n_paths // PATH_BLOCK)
    out = np.empty((n_blocks * PATH_BLOCK, 2, n))

    def fill(lo, hi):
        for blk in range(lo, hi):
            gen = np.random.Generator(np.random.Philox(_seed_sequence(seed, blk)))
            out[blk * PATH_BLOCK:(blk + 1) * PATH_BLOCK] = gen.standard_normal((PATH_BLOCK, 2, n))

    run_chunks(fill, n_blocks)
    out = out[:n_paths] * sd
    return BrownianBundle(dW=np.ascontiguousarray(out[:, 1]), dY=np.ascontiguousarray(out[:, 0]),
                          seed=seed, grid=grid)


def _raise_nonfinite(arrays, step, t):
    bad = np.zeros(arrays[0].shape, dtype=bool)
    for a in arrays:
        bad |= ~np.isfinite(a)
    i = int(np.flatnonzero(bad)[0])
    raise FloatingPointError(f"non-finite state at step {step} (t={t:.6g}), particle {i}")


def evolve_system(model: ModelSpec, policy, drivers: BrownianBundle,
                  keep_paths: bool = True) -> EnsembleTrajectory:
    """Euler-Maruyama simulation of ``(rho, x, xi)`` under ``policy``.

    ``policy`` follows the :class:`rsmfc.policies.ControlPolicy` protocol: it
    is called once per step with the current time, states and mean-field
    term, and is told the step's observation increment afterwards.
    """
    grid = drivers.grid
    N, n = drivers.dW.shape
    dt = grid.dt
    times = grid.times
    x = np.full(N, float(model.x0))
    log_rho = np.zeros(N)
    xi = np.zeros(N)
    cols = n + 1 if keep_paths else 2
    X = np.empty((N, cols))
    LR = np.empty((N, cols))
    XI = np.empty((N, cols))
    U = np.empty((N, n)) if keep_paths else None
    M = np.empty(n + 1)
    lo_u, hi_u = model.u_bounds

    policy.start(N, grid)
    X[:, 0], LR[:, 0], XI[:, 0] = x, log_rho, xi
    for k in range(n):
        t = times[k]
        M[k] = np.sum(np.exp(log_rho) * x) / N
        u = np.clip(np.broadcast_to(np.asarray(policy.control(k, t, x, M[k]), float), (N,)), lo_u, hi_u)
        dWk, dYk = drivers.dW[:, k], drivers.dY[:, k]
        x_new = np.empty(N)
        m = M[k]

        def step(lo, hi):
            xs, us = x[lo:hi], u[lo:hi]
            beta = model.obs_beta(t, xs)
            alpha = model.diff_alpha(t, xs, m)
            sigma = model.diff_sigma(t, xs, m)
            drift = model.drift_b(t, xs, m, us) - alpha * beta
            x_new[lo:hi] = xs + drift * dt + sigma * dWk[lo:hi] + alpha * dYk[lo:hi]
            log_rho[lo:hi] += beta * dYk[lo:hi] - 0.5 * beta * beta * dt
            xi[lo:hi] += model.run_cost_f(t, xs, m, us) * dt

        run_chunks(step, N)
        policy.observe(k, t, dYk, u)
        x = x_new
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(log_rho)) and np.all(np.isfinite(xi))):
            _raise_nonfinite((x, log_rho, xi), k + 1, times[k + 1])
        if keep_paths:
            X[:, k + 1], LR[:, k + 1], XI[:, k + 1] = x, log_rho, xi
            U[:, k] = u
    M[n] = np.sum(np.exp(log_rho) * x) / N
    aux = policy.diagnostics()
    aux["m_path"] = M
    if not keep_paths:
        X[:, 1], LR[:, 1], XI[:, 1] = x, log_rho, xi
        M = M[[0, n]]
        times = times[[0, n]]
    return EnsembleTrajectory(grid=grid, times=times, log_rho=LR, x=X, xi=XI, m=M,
                              controls=U, aux=aux)


def mean_with_se(values) -> MeanWithSE:
    values = np.asarray(values, float)
    n = values.size
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    return MeanWithSE(mean, se, n)


def density_terminal_check(traj: EnsembleTrajectory) -> MeanWithSE:
    """Sample mean and standard error of ``rho(T)`` (should be 1)."""
    return mean_with_se(np.exp(traj.log_rho[:, -1]))


def log_terminal_weight(traj: EnsembleTrajectory, model: ModelSpec, theta=None) -> np.ndarray:
    """``log psi = log rho(T) + theta (xi(T) + h(x(T), m(T)))`` per path."""
    theta = model.theta if theta is None else theta
    h = model.term_cost_h(traj.x[:, -1], traj.m[-1])
    return traj.log_rho[:, -1] + theta * (traj.xi[:, -1] + h)


def terminal_weight(traj: EnsembleTrajectory, model: ModelSpec, theta=None) -> np.ndarray:
    """Terminal exponential weight ``psi`` per path.

    If the model declares a cost bound ``C``, every weight is checked against
    ``exp(-(1+T) C |theta|) rho(T) <= psi <= exp((1+T) C |theta|) rho(T)``.
    """
    theta = model.theta if theta is None else theta
    log_psi = log_terminal_weight(traj, model, theta)
    if np.any(log_psi > _LOG_MAX):
        raise OverflowError("terminal weight overflows; reduce theta or the horizon")
    if model.coeff_bound_C is not None:
        spread = (1.0 + model.horizon_T) * model.coeff_bound_C * abs(theta)
        excess = np.abs(log_psi - traj.log_rho[:, -1]) - spread
        if np.any(excess > 1e-12 * max(1.0, spread)):
            raise ValueError("terminal weight escapes the bracket implied by coeff_bound_C")
    return np.exp(log_psi)


def evolve_vtheta(model: ModelSpec, ell, drivers: BrownianBundle, traj: EnsembleTrajectory,
                  v0: float, theta=None) -> VPath:
    """Forward log-space evolution of ``dv = theta v <ell, dB>``, ``v(0) = v0``.

    ``ell(k, t, x)`` returns the pair ``(ell_1, ell_2)`` (the ``Y`` and ``W``
    loadings) at step ``k``; it is evaluated on the trajectory's own states.
    """
    if not v0 > 0:
        raise ValueError("v0 must be positive")
    if traj.x.shape[1] != drivers.grid.n_steps + 1:
        raise ValueError("trajectory must keep full paths")
    theta = model.theta if theta is None else theta
    N, n = drivers.dW.shape
    dt = drivers.grid.dt
    times = drivers.grid.times
    log_v = np.empty((N, n + 1))
    log_v[:, 0] = np.log(v0)
    for k in range(n):
        l1, l2 = ell(k, times[k], traj.x[:, k])
        incr = theta * (l1 * drivers.dY[:, k] + l2 * drivers.dW[:, k]) - 0.5 * theta**2 * (l1 * l1 + l2 * l2) * dt
        log_v[:, k + 1] = log_v[:, k] + incr
        if not np.all(np.isfinite(log_v[:, k + 1])):
            _raise_nonfinite((log_v[:, k + 1],), k + 1, times[k + 1])
    return VPath(log_v=log_v, theta=theta)


@dataclass
class GirsanovRow:
    step: int
    component: str
    estimate: float
    expected: float
    se: float

    @property
    def ok(self) -> bool:
        return abs(self.estimate - self.expected) <= 3.0 * self.se


def girsanov_drift_check(vpath: VPath, ell, drivers: BrownianBundle, traj: EnsembleTrajectory,
                         steps) -> list[GirsanovRow]:
    """Compare ``E[L_{k+1} dB_k]`` with ``theta E[L_k ell_k] dt``.

    Equality is the discrete trace of ``B - theta int ell ds`` being a
    Brownian motion under the tilted measure.
    """
    L = vpath.L
    dt = drivers.grid.dt
    times = drivers.grid.times
    rows = []
    for k in steps:
        l1, l2 = ell(k, times[k], traj.x[:, k])
        for name, inc, lk in (("Y", drivers.dY[:, k], l1), ("W", drivers.dW[:, k], l2)):
            diff = L[:, k + 1] * inc - vpath.theta * L[:, k] * lk * dt
            est = mean_with_se(diff)
            rows.append(GirsanovRow(k, name, float(np.mean(L[:, k + 1] * inc)),
                                    float(np.mean(vpath.theta * L[:, k] * lk * dt)), est.se))
    return rows
