"""Scenario definitions: coefficient bundles, the LQ special case and the time grid.

Coefficient functions are plain numpy-broadcastable callables.  They are
evaluated on whole particle ensembles at once, so ``drift_b(t, x, m, u)`` must
accept ``x`` and ``u`` as arrays and ``t``, ``m`` as scalars.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Coeff4 = Callable[..., np.ndarray]

PARTIAL_NAMES = (
    "b_x", "b_m", "sigma_x", "sigma_m", "alpha_x", "alpha_m",
    "beta_x", "f_x", "f_m", "h_x", "h_m",
)

# partial name -> (base function field, argument differentiated)
_PARTIAL_BASE = {
    "b_x": ("drift_b", "x"),
    "b_m": ("drift_b", "m"),
    "sigma_x": ("diff_sigma", "x"),
    "sigma_m": ("diff_sigma", "m"),
    "alpha_x": ("diff_alpha", "x"),
    "alpha_m": ("diff_alpha", "m"),
    "beta_x": ("obs_beta", "x"),
    "f_x": ("run_cost_f", "x"),
    "f_m": ("run_cost_f", "m"),
    "h_x": ("term_cost_h", "x"),
    "h_m": ("term_cost_h", "m"),
}

# argument names of each base function, in call order
_SIGNATURES = {
    "drift_b": ("t", "x", "m", "u"),
    "diff_sigma": ("t", "x", "m"),
    "diff_alpha": ("t", "x", "m"),
    "obs_beta": ("t", "x"),
    "run_cost_f": ("t", "x", "m", "u"),
    "term_cost_h": ("x", "m"),
}


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_0 = 0 < ... < t_n = T``."""

    n_steps: int
    horizon: float

    def __post_init__(self):
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps!r}")
        if not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon!r}")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self) -> np.ndarray:
        t = np.arange(self.n_steps + 1) * self.dt
        t[-1] = self.horizon
        return t

    def refine(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.n_steps * factor, self.horizon)


@dataclass(frozen=True)
class ModelSpec:
    """Coefficients of the merged fully observed system and its cost.

    ``coeff_bound_C`` declares ``|f|, |h| <= C``; it is spot-checked on
    construction and enables the bracketing checks on the terminal weight.
    ``u_bounds`` is the admissible control interval.
    """

    drift_b: Coeff4
    diff_sigma: Coeff4
    diff_alpha: Coeff4
    obs_beta: Coeff4
    run_cost_f: Coeff4
    term_cost_h: Coeff4
    partials: dict
    theta: float
    horizon_T: float
    x0: float
    coeff_bound_C: float | None = None
    u_bounds: tuple = (-np.inf, np.inf)
    label: str = "custom"

    def __post_init__(self):
        if self.theta == 0:
            raise ValueError("theta must be nonzero")
        if not self.horizon_T > 0:
            raise ValueError(f"horizon_T must be positive, got {self.horizon_T!r}")
        missing = [name for name in PARTIAL_NAMES if name not in self.partials]
        if missing:
            raise ValueError(f"missing partial derivatives: {', '.join(missing)}")
        lo, hi = self.u_bounds
        if not lo <= hi:
            raise ValueError(f"empty control interval {self.u_bounds!r}")
        if self.coeff_bound_C is not None:
            if self.coeff_bound_C < 0:
                raise ValueError("coeff_bound_C must be nonnegative")
            worst = _cost_bound_excess(self, n_probe=256, seed=0)
            if worst > 0:
                raise ValueError(
                    f"declared coeff_bound_C={self.coeff_bound_C} exceeded by {worst:.3g}"
                )

    def partial(self, name: str) -> Coeff4:
        return self.partials[name]

    def c(self, t, x, m, u):
        """Effective drift ``b - alpha * beta`` of the state under the reference measure."""
        return self.drift_b(t, x, m, u) - self.diff_alpha(t, x, m) * self.obs_beta(t, x)

    def c_x(self, t, x, m, u):
        p = self.partials
        return (p["b_x"](t, x, m, u) - p["alpha_x"](t, x, m) * self.obs_beta(t, x)
                - self.diff_alpha(t, x, m) * p["beta_x"](t, x))

    def c_m(self, t, x, m, u):
        p = self.partials
        return p["b_m"](t, x, m, u) - p["alpha_m"](t, x, m) * self.obs_beta(t, x)

    def with_theta(self, theta: float) -> "ModelSpec":
        from dataclasses import replace
        return replace(self, theta=theta)


@dataclass(frozen=True)
class LqSpec:
    """Scalar linear-quadratic scenario.

    State ``dx = (a x + b u) dt + sigma dW + alpha dW~``, observation
    ``dY = beta x dt + dW~``, cost ``exp(theta [int u^2/2 dt + x(T)^2/2])``.
    """

    a: float
    b_gain: float
    alpha: float
    beta: float
    sigma: float
    theta: float
    horizon_T: float
    x0: float
    u_lo: float = -1.0e3
    u_hi: float = 1.0e3

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError(f"LQ closed form needs theta > 0, got {self.theta!r}")
        if not self.horizon_T > 0:
            raise ValueError(f"horizon_T must be positive, got {self.horizon_T!r}")
        if not self.u_lo <= self.u_hi:
            raise ValueError("u_lo must not exceed u_hi")

    @property
    def c(self) -> float:
        return self.a - self.alpha * self.beta


def default_lq(**overrides) -> LqSpec:
    """The desk-scale scenario used throughout the tests and demos."""
    params = dict(a=0.3, b_gain=1.0, alpha=0.2, beta=0.5, sigma=0.4,
                  theta=1.0, horizon_T=1.0, x0=1.0)
    params.update(overrides)
    return LqSpec(**params)


def expand_lq(spec: LqSpec) -> ModelSpec:
    """General-model view of an LQ scenario (all partials exact)."""
    if not spec.theta > 0:
        raise ValueError("theta must be positive")
    a, b, al, be, sg = spec.a, spec.b_gain, spec.alpha, spec.beta, spec.sigma

    def zero_x(t, x, m, *rest):
        return 0.0 * x

    partials = {
        "b_x": lambda t, x, m, u: 0.0 * x + a,
        "b_m": zero_x,
        "sigma_x": zero_x,
        "sigma_m": zero_x,
        "alpha_x": zero_x,
        "alpha_m": zero_x,
        "beta_x": lambda t, x: 0.0 * x + be,
        "f_x": zero_x,
        "f_m": zero_x,
        "h_x": lambda x, m: x + 0.0,
        "h_m": lambda x, m: 0.0 * x,
    }
    return ModelSpec(
        drift_b=lambda t, x, m, u: a * x + b * u,
        diff_sigma=lambda t, x, m: 0.0 * x + sg,
        diff_alpha=lambda t, x, m: 0.0 * x + al,
        obs_beta=lambda t, x: be * x,
        run_cost_f=lambda t, x, m, u: 0.5 * u * u + 0.0 * x,
        term_cost_h=lambda x, m: 0.5 * x * x,
        partials=partials,
        theta=spec.theta,
        horizon_T=spec.horizon_T,
        x0=spec.x0,
        u_bounds=(spec.u_lo, spec.u_hi),
        label="lq",
    )


@dataclass
class ValidationReport:
    n_probe: int
    rtol: float
    worst: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def _probe_points(spec: ModelSpec, n_probe: int, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    return {
        "t": rng.uniform(0.0, spec.horizon_T, n_probe),
        "x": rng.normal(0.0, 1.5, n_probe),
        "m": rng.normal(0.0, 1.5, n_probe),
        "u": rng.normal(0.0, 1.5, n_probe),
    }


def _call(spec: ModelSpec, fname: str, point: dict):
    fn = getattr(spec, fname)
    return fn(*(point[a] for a in _SIGNATURES[fname]))


def _cost_bound_excess(spec: ModelSpec, n_probe: int, seed: int) -> float:
    pts = _probe_points(spec, n_probe, seed)
    worst = 0.0
    for i in range(n_probe):
        point = {k: float(v[i]) for k, v in pts.items()}
        for fname in ("run_cost_f", "term_cost_h"):
            val = abs(float(_call(spec, fname, point)))
            worst = max(worst, val - spec.coeff_bound_C)
    return worst


def validate_model(spec: ModelSpec, n_probe: int = 100, seed: int = 0,
                   rtol: float = 1e-5) -> ValidationReport:
    """Audit the user-supplied partials against central finite differences.

    Discrepancies are reported, not raised.  The step is scaled to the
    magnitude of the probed argument.
    """
    if n_probe < 1:
        raise ValueError("n_probe must be at least 1")
    report = ValidationReport(n_probe=n_probe, rtol=rtol)
    pts = _probe_points(spec, n_probe, seed)
    eps3 = np.finfo(float).eps ** (1.0 / 3.0)
    for name in PARTIAL_NAMES:
        fname, arg = _PARTIAL_BASE[name]
        deriv = spec.partials[name]
        worst = 0.0
        for i in range(n_probe):
            point = {k: float(v[i]) for k, v in pts.items()}
            h = eps3 * max(1.0, abs(point[arg]))
            up, dn = dict(point), dict(point)
            up[arg] += h
            dn[arg] -= h
            fd = (float(_call(spec, fname, up)) - float(_call(spec, fname, dn))) / (up[arg] - dn[arg])
            exact = float(deriv(*(point[a] for a in _SIGNATURES[fname])))
            worst = max(worst, abs(fd - exact) / max(1.0, abs(exact)))
        report.worst[name] = worst
        if not worst <= rtol:
            report.failures.append(name)
    return report
