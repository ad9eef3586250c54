"""Monte Carlo estimators: risk-sensitive cost, small-theta expansion,
variational-inequality certification and paired perturbation tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .filtering import FilterEstimate, particle_filter
from .hamiltonian import eval_H_rs, lq_adjoint_state, lq_control
from .model import LqSpec, ModelSpec, TimeGrid, expand_lq
from .policies import LqFeedback, ansatz_ell, filter_feedback
from .riccati import RiccatiSolution
from .sde import EnsembleTrajectory, evolve_system, generate_drivers, log_terminal_weight


@dataclass
class CostEstimate:
    j_theta: float
    se: float
    n_paths: int
    theta: float
    control_label: str
    log_j: float = float("nan")


def _log_mean_exp(log_vals: np.ndarray) -> tuple[float, float]:
    """``log mean exp`` and the standard error of the mean of ``exp``, overflow-safe."""
    n = log_vals.size
    shift = float(np.max(log_vals))
    scaled = np.exp(log_vals - shift)
    log_mean = float(logsumexp(log_vals) - np.log(n))
    se = float(np.std(scaled, ddof=1) / np.sqrt(n) * np.exp(shift)) if n > 1 else float("nan")
    return log_mean, se


def cost_from_trajectory(traj: EnsembleTrajectory, model: ModelSpec, label: str = "",
                         theta=None) -> CostEstimate:
    theta = model.theta if theta is None else theta
    log_j, se = _log_mean_exp(log_terminal_weight(traj, model, theta))
    return CostEstimate(float(np.exp(log_j)), se, traj.n_paths, theta, label, log_j)


def estimate_cost(model: ModelSpec, policy, n_paths: int, seed, n_steps: int = 200) -> CostEstimate:
    """``J = E[rho(T) exp(theta [xi(T) + h])]`` by log-mean-exp over simulated paths."""
    grid = TimeGrid(n_steps, model.horizon_T)
    drivers = generate_drivers(grid, n_paths, seed)
    traj = evolve_system(model, policy, drivers, keep_paths=False)
    return cost_from_trajectory(traj, model, getattr(policy, "label", type(policy).__name__))


# small-theta expansion ---------------------------------------------------

@dataclass
class ExpansionRow:
    theta: float
    j_theta: float
    scaled_log: float
    mean_psi: float
    var_psi: float
    residual: float


@dataclass
class ExpansionTable:
    rows: list
    slope: float

    @property
    def all_zero(self) -> bool:
        return all(r.residual == 0.0 for r in self.rows)


def expansion_rows(log_rho: np.ndarray, Psi: np.ndarray, theta_list) -> list[ExpansionRow]:
    """Second-order cumulant expansion residuals of the rho-weighted law of ``Psi``.

    Moments are self-normalised by ``sum(rho)``, and ``Psi`` is centred at its
    weighted mean before exponentiating, so a constant ``Psi`` gives an
    exactly zero residual.
    """
    log_rho = np.asarray(log_rho, float)
    Psi = np.asarray(Psi, float)
    lse_rho = logsumexp(log_rho)
    w = np.exp(log_rho - lse_rho)
    ref = Psi[0]
    mean = ref + float(np.dot(w, Psi - ref))
    D = Psi - mean
    var = float(np.dot(w, D * D))
    n = Psi.size
    rows = []
    for th in theta_list:
        if th == 0:
            raise ValueError("theta values must be nonzero")
        centred = (logsumexp(log_rho + th * D) - lse_rho) / th
        residual = abs(centred - 0.5 * th * var)
        log_j = float(logsumexp(log_rho + th * Psi) - np.log(n))
        rows.append(ExpansionRow(th, float(np.exp(log_j)), log_j / th, mean, var, float(residual)))
    return rows


def fit_slope(thetas, residuals) -> float:
    """Least-squares slope of ``log r`` against ``log theta`` (NaN if any residual is zero)."""
    r = np.asarray(residuals, float)
    if np.any(r <= 0):
        return float("nan")
    return float(np.polyfit(np.log(np.abs(thetas)), np.log(r), 1)[0])


def theta_expansion_check(model: ModelSpec, policy, theta_list, n_paths: int, seed,
                          n_steps: int = 200) -> ExpansionTable:
    """Residual of ``(1/theta) log J = E[Psi] + theta var(Psi)/2 + O(theta^2)``.

    One simulation serves every theta (common random numbers), which
    requires the policy not to depend on theta.
    """
    grid = TimeGrid(n_steps, model.horizon_T)
    traj = evolve_system(model, policy, generate_drivers(grid, n_paths, seed), keep_paths=False)
    Psi = traj.xi[:, -1] + model.term_cost_h(traj.x[:, -1], traj.m[-1])
    rows = expansion_rows(traj.log_rho[:, -1], Psi, theta_list)
    return ExpansionTable(rows, fit_slope([r.theta for r in rows], [r.residual for r in rows]))


# variational inequality --------------------------------------------------

@dataclass
class ViCell:
    path: int
    step: int
    t: float
    u: float
    u_bar: float
    estimate: float
    se: float
    analytic: float
    violation: bool
    collapse_ok: bool


@dataclass
class ViReport:
    cells: list = field(default_factory=list)
    abs_tol: float = 1e-6

    @property
    def violations(self) -> list:
        return [c for c in self.cells if c.violation]

    @property
    def collapse_failures(self) -> list:
        return [c for c in self.cells if not c.collapse_ok]

    @property
    def ok(self) -> bool:
        return not self.violations and not self.collapse_failures


def check_variational_inequality(spec: LqSpec, sol: RiccatiSolution, filter_estimates,
                                 u_offsets, t_indices, abs_tol: float = 1e-6,
                                 candidate=None) -> ViReport:
    """Conditional Hamiltonian differences at the grid cells ``(t_k, u_bar(t_k) + offset)``.

    ``filter_estimates`` are particle-filter runs with ``keep_cloud=True``,
    one per observation record.  The particle weights give
    ``E^theta[H^theta(u) - H^theta(u_bar) | F^Y_t]`` with ``u_bar`` computed from
    the same weights, so the estimate should equal ``-(u - u_bar)^2 / 2``.

    ``candidate(k, filter_mean)`` replaces the feedback ``-b gamma pi`` as
    ``u_bar``; a wrong candidate shows up as violations.
    """
    model = expand_lq(spec)
    report = ViReport(abs_tol=abs_tol)
    times = sol.grid.times
    for r, est in enumerate(filter_estimates):
        cloud = est.cloud
        if cloud is None:
            raise ValueError("filter estimates must keep their particle cloud")
        for k in t_indices:
            t = times[k]
            x, w = cloud.x[k], cloud.weights[k]
            rho = np.exp(cloud.log_rho[k])
            if candidate is None:
                u_bar = float(lq_control(spec, sol, est.mean[k], k)[0])
            else:
                u_bar = float(candidate(k, est.mean[k]))
            adj = lq_adjoint_state(spec, sol, k, rho, x)
            h_bar = eval_H_rs(model, t, rho, x, np.nan, u_bar, adj)
            for off in u_offsets:
                u = u_bar + float(off)
                dH = eval_H_rs(model, t, rho, x, np.nan, u, adj) - h_bar
                mean = float(np.dot(w, dH))
                se = float(np.sqrt(np.dot(w * w, (dH - mean) ** 2)))
                analytic = -0.5 * (u - u_bar) ** 2
                report.cells.append(ViCell(
                    path=r, step=int(k), t=float(t), u=u, u_bar=u_bar, estimate=mean, se=se,
                    analytic=analytic,
                    violation=mean > 3.0 * se + abs_tol,
                    collapse_ok=abs(mean - analytic) <= 3.0 * se + abs_tol,
                ))
    return report


def smp_filter_runs(spec: LqSpec, sol: RiccatiSolution, n_records: int, n_particles: int,
                    seed) -> tuple[list[FilterEstimate], EnsembleTrajectory]:
    """Observation records from the closed loop and a particle filter on each.

    The records are the ``Y`` increments of ``n_records`` paths simulated
    under the candidate feedback; each filter applies ``-b gamma`` times its
    own conditional mean as control.
    """
    model = expand_lq(spec)
    drivers = generate_drivers(sol.grid, n_records, (seed, 0))
    traj = evolve_system(model, LqFeedback(spec, sol), drivers)
    ell = ansatz_ell(sol)
    runs = [particle_filter(model, ell, drivers.dY[r], n_particles, (seed, 1, r),
                            control=filter_feedback(spec, sol), keep_cloud=True)
            for r in range(n_records)]
    return runs, traj


def certify_smp(spec: LqSpec, sol: RiccatiSolution, n_records: int = 8, n_particles: int = 10_000,
                seed=0, u_offsets=None, t_indices=None, abs_tol: float = 1e-6) -> ViReport:
    """Variational-inequality report on a 5 x 9 grid of ``(t, u)`` cells per record."""
    n = sol.grid.n_steps
    if u_offsets is None:
        u_offsets = np.linspace(-2.0, 2.0, 9)
    if t_indices is None:
        t_indices = [int(round(f * n)) for f in (0.1, 0.3, 0.5, 0.7, 0.9)]
    runs, _ = smp_filter_runs(spec, sol, n_records, n_particles, seed)
    return check_variational_inequality(spec, sol, runs, u_offsets, t_indices, abs_tol)


# perturbation tests ------------------------------------------------------

@dataclass(frozen=True)
class Perturbation:
    """``kind`` is ``"none"``, ``"gain"`` (gamma -> (1 + kappa) gamma) or ``"needle"``."""

    kind: str
    kappa: float = 0.0
    tau: float = 0.0
    eps: float = 0.0
    delta: float = 0.0

    @property
    def label(self) -> str:
        if self.kind == "gain":
            return f"gain(kappa={self.kappa:g})"
        if self.kind == "needle":
            return f"needle(tau={self.tau:g},eps={self.eps:g},delta={self.delta:g})"
        return "none"


@dataclass
class ArmResult:
    label: str
    perturbation: Perturbation
    j_theta: float
    diff: float
    se_diff: float

    @property
    def significant_increase(self) -> bool:
        return self.diff > 3.0 * self.se_diff

    @property
    def consistent(self) -> bool:
        """``J(base) <= J(perturbed) + 3 SE``."""
        return self.diff >= -3.0 * self.se_diff


@dataclass
class PerturbationTable:
    base: CostEstimate
    arms: list


def _policy_for(spec, sol, p: Perturbation, form: str):
    if p.kind == "none":
        return LqFeedback(spec, sol, form)
    if p.kind == "gain":
        return LqFeedback(spec, sol, form, gain_scale=1.0 + p.kappa)
    if p.kind == "needle":
        return LqFeedback(spec, sol, form, needle=(p.tau, p.eps, p.delta))
    raise ValueError(f"unknown perturbation kind {p.kind!r}")


def perturbation_optimality_test(spec: LqSpec, sol: RiccatiSolution, perturbations, n_paths: int,
                                 seed, form: str = "scaled-gain") -> PerturbationTable:
    """Paired cost differences ``J(perturbed) - J(base)`` on shared Brownian drivers."""
    model = expand_lq(spec)
    drivers = generate_drivers(sol.grid, n_paths, seed)
    base = LqFeedback(spec, sol, form)
    log_base = log_terminal_weight(evolve_system(model, base, drivers, keep_paths=False), model)
    lj, se = _log_mean_exp(log_base)
    base_est = CostEstimate(float(np.exp(lj)), se, n_paths, spec.theta, base.label, lj)
    arms = []
    for p in perturbations:
        policy = _policy_for(spec, sol, p, form)
        log_arm = log_terminal_weight(evolve_system(model, policy, drivers, keep_paths=False), model)
        shift = max(float(log_arm.max()), float(log_base.max()))
        d = np.exp(log_arm - shift) - np.exp(log_base - shift)
        scale = np.exp(shift)
        diff = float(np.mean(d) * scale)
        se_d = float(np.std(d, ddof=1) / np.sqrt(n_paths) * scale)
        arms.append(ArmResult(p.label, p, float(np.exp(logsumexp(log_arm) - np.log(n_paths))), diff, se_d))
    return PerturbationTable(base_est, arms)
