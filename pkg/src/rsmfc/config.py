"""Scenario and run configuration read from TOML.

A config has a ``[scenario]`` table and an optional ``[run]`` table::

    [scenario]
    kind = "lq"            # or "custom-table"
    a = 0.3
    b_gain = 1.0
    alpha = 0.2
    beta = 0.5
    sigma = 0.4
    theta = 1.0
    T = 1.0
    x0 = 1.0
    n_steps = 200
    u_lo = -1000.0
    u_hi = 1000.0

    [run]
    seed = 42
    paths = 100000
    particles = 10000
    case = 1

For ``kind = "custom-table"`` the coefficients are polynomials listed as
terms ``[coef, px, pm, pu]`` meaning ``coef * x**px * m**pm * u**pu``::

    [scenario.coefficients]
    drift_b = [[0.3, 1, 0, 0], [1.0, 0, 0, 1]]
    diff_sigma = [[0.4, 0, 0, 0]]
    diff_alpha = [[0.2, 0, 0, 0]]
    obs_beta = [[0.5, 1, 0, 0]]
    run_cost_f = [[0.5, 0, 0, 2]]
    term_cost_h = [[0.5, 2, 0, 0]]

Exact partial derivatives are generated from the terms.  Any invalid key or
value raises :class:`ConfigError` naming it.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

import numpy as np

from .model import PARTIAL_NAMES, LqSpec, ModelSpec, default_lq, expand_lq

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


# allowed variables per coefficient (x, m, u)
_VARS = {
    "drift_b": (True, True, True),
    "diff_sigma": (True, True, False),
    "diff_alpha": (True, True, False),
    "obs_beta": (True, False, False),
    "run_cost_f": (True, True, True),
    "term_cost_h": (True, True, False),
}

RUN_DEFAULTS = {
    "seed": 42,
    "paths": 100_000,
    "particles": 10_000,
    "case": 1,
    "records": 8,
    "form": "scaled-gain",
    "source": "particle",
    "thetas": [0.05, 0.1, 0.2, 0.4],
    "u_offsets": [-2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0],
    "t_fractions": [0.1, 0.3, 0.5, 0.7, 0.9],
    "dump_paths": 64,
    "out": "rsmfc-out",
}


class Polynomial:
    """``sum coef * x**px * m**pm * u**pu`` with exact partials."""

    def __init__(self, terms):
        self.terms = [(float(c), int(px), int(pm), int(pu)) for c, px, pm, pu in terms]

    def __call__(self, x, m=0.0, u=0.0):
        x = np.asarray(x, float)
        out = np.zeros(np.broadcast(x, np.asarray(m), np.asarray(u)).shape)
        for c, px, pm, pu in self.terms:
            out = out + c * x**px * np.asarray(m, float) ** pm * np.asarray(u, float) ** pu
        return out

    def derivative(self, var: str) -> "Polynomial":
        pos = "xmu".index(var)
        terms = []
        for term in self.terms:
            power = term[1 + pos]
            if power == 0:
                continue
            new = list(term)
            new[0] = term[0] * power
            new[1 + pos] = power - 1
            terms.append(tuple(new))
        return Polynomial(terms)


def _polynomial(name, terms) -> Polynomial:
    key = f"scenario.coefficients.{name}"
    if not isinstance(terms, list):
        raise ConfigError(f"{key}: expected a list of [coef, px, pm, pu] terms")
    allowed = _VARS[name]
    for term in terms:
        if not (isinstance(term, list) and len(term) == 4):
            raise ConfigError(f"{key}: each term must be [coef, px, pm, pu]")
        coef, *powers = term
        if not isinstance(coef, (int, float)) or not np.isfinite(coef):
            raise ConfigError(f"{key}: coefficient must be a finite number")
        for var, p, ok in zip("xmu", powers, allowed):
            if not isinstance(p, int) or p < 0:
                raise ConfigError(f"{key}: power of {var} must be a nonnegative integer")
            if p > 0 and not ok:
                raise ConfigError(f"{key}: {name} may not depend on {var}")
    return Polynomial(terms)


def _custom_model(sc: dict, theta, T, x0, u_lo, u_hi) -> ModelSpec:
    coeffs = sc.get("coefficients")
    if not isinstance(coeffs, dict):
        raise ConfigError("scenario.coefficients: missing table")
    unknown = set(coeffs) - set(_VARS)
    if unknown:
        raise ConfigError(f"scenario.coefficients.{sorted(unknown)[0]}: unknown coefficient")
    missing = [n for n in _VARS if n not in coeffs]
    if missing:
        raise ConfigError(f"scenario.coefficients.{missing[0]}: missing")
    P = {n: _polynomial(n, coeffs[n]) for n in _VARS}

    def tx(poly):
        return lambda t, x, m: poly(x, m)

    def txmu(poly):
        return lambda t, x, m, u: poly(x, m, u)

    partials = {}
    for pname in PARTIAL_NAMES:
        base, var = pname.split("_")
        full = {"b": "drift_b", "sigma": "diff_sigma", "alpha": "diff_alpha", "beta": "obs_beta",
                "f": "run_cost_f", "h": "term_cost_h"}[base]
        d = P[full].derivative(var)
        if full in ("drift_b", "run_cost_f"):
            partials[pname] = txmu(d)
        elif full == "obs_beta":
            partials[pname] = (lambda dd: lambda t, x: dd(x))(d)
        elif full == "term_cost_h":
            partials[pname] = (lambda dd: lambda x, m: dd(x, m))(d)
        else:
            partials[pname] = tx(d)
    h = P["term_cost_h"]
    return ModelSpec(
        drift_b=txmu(P["drift_b"]),
        diff_sigma=tx(P["diff_sigma"]),
        diff_alpha=tx(P["diff_alpha"]),
        obs_beta=lambda t, x: P["obs_beta"](x),
        run_cost_f=txmu(P["run_cost_f"]),
        term_cost_h=lambda x, m: h(x, m),
        partials=partials,
        theta=theta,
        horizon_T=T,
        x0=x0,
        u_bounds=(u_lo, u_hi),
        label="custom-table",
    )


@dataclass
class Scenario:
    kind: str
    n_steps: int
    model: ModelSpec
    lq: LqSpec | None = None
    raw: dict = field(default_factory=dict)


def _number(table, key, prefix, default=None, positive=False, nonzero=False):
    full = f"{prefix}.{key}"
    if key not in table:
        if default is None:
            raise ConfigError(f"{full}: missing")
        return default
    val = table[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)) or not np.isfinite(val):
        raise ConfigError(f"{full}: expected a finite number, got {val!r}")
    if positive and not val > 0:
        raise ConfigError(f"{full}: must be positive, got {val!r}")
    if nonzero and val == 0:
        raise ConfigError(f"{full}: must be nonzero")
    return float(val)


def build_scenario(sc: dict) -> Scenario:
    if not isinstance(sc, dict):
        raise ConfigError("scenario: missing table")
    kind = sc.get("kind", "lq")
    p = "scenario"
    lq_default = default_lq()
    n_steps = sc.get("n_steps", 200)
    if isinstance(n_steps, bool) or not isinstance(n_steps, int) or n_steps < 1:
        raise ConfigError(f"scenario.n_steps: must be a positive integer, got {n_steps!r}")
    T = _number(sc, "T", p, lq_default.horizon_T, positive=True)
    x0 = _number(sc, "x0", p, lq_default.x0)
    u_lo = _number(sc, "u_lo", p, lq_default.u_lo)
    u_hi = _number(sc, "u_hi", p, lq_default.u_hi)
    if not u_lo <= u_hi:
        raise ConfigError("scenario.u_hi: must not be below u_lo")
    if kind == "lq":
        known = {"kind", "n_steps", "T", "x0", "u_lo", "u_hi", "a", "b_gain", "alpha", "beta", "sigma", "theta"}
        extra = set(sc) - known
        if extra:
            raise ConfigError(f"scenario.{sorted(extra)[0]}: unknown key for kind 'lq'")
        vals = {k: _number(sc, k, p, getattr(lq_default, k)) for k in ("a", "b_gain", "alpha", "beta", "sigma")}
        theta = _number(sc, "theta", p, lq_default.theta, positive=True)
        spec = LqSpec(theta=theta, horizon_T=T, x0=x0, u_lo=u_lo, u_hi=u_hi, **vals)
        return Scenario(kind, n_steps, expand_lq(spec), spec, sc)
    if kind == "custom-table":
        known = {"kind", "n_steps", "T", "x0", "u_lo", "u_hi", "theta", "coefficients"}
        extra = set(sc) - known
        if extra:
            raise ConfigError(f"scenario.{sorted(extra)[0]}: unknown key for kind 'custom-table'")
        theta = _number(sc, "theta", p, nonzero=True)
        return Scenario(kind, n_steps, _custom_model(sc, theta, T, x0, u_lo, u_hi), None, sc)
    raise ConfigError(f"scenario.kind: expected 'lq' or 'custom-table', got {kind!r}")


def resolve_run(run: dict | None, overrides: dict) -> dict:
    """Merge defaults, the ``[run]`` table and command-line overrides, then validate."""
    run = dict(run or {})
    unknown = set(run) - set(RUN_DEFAULTS)
    if unknown:
        raise ConfigError(f"run.{sorted(unknown)[0]}: unknown key")
    out = dict(RUN_DEFAULTS)
    out.update(run)
    out.update({k: v for k, v in overrides.items() if v is not None})
    for key in ("paths", "particles", "records", "dump_paths"):
        v = out[key]
        if isinstance(v, bool) or not isinstance(v, int) or v < 1:
            raise ConfigError(f"run.{key}: must be a positive integer, got {v!r}")
    if isinstance(out["seed"], bool) or not isinstance(out["seed"], int) or out["seed"] < 0:
        raise ConfigError(f"run.seed: must be a nonnegative integer, got {out['seed']!r}")
    if out["case"] not in (1, 2):
        raise ConfigError(f"run.case: must be 1 or 2, got {out['case']!r}")
    if out["form"] not in ("scaled-gain", "kalman"):
        raise ConfigError(f"run.form: must be 'scaled-gain' or 'kalman', got {out['form']!r}")
    if out["source"] not in ("particle", "closed-form"):
        raise ConfigError(f"run.source: must be 'particle' or 'closed-form', got {out['source']!r}")
    for key in ("thetas", "u_offsets", "t_fractions"):
        v = out[key]
        if not isinstance(v, list) or not v or not all(
                isinstance(e, (int, float)) and not isinstance(e, bool) for e in v):
            raise ConfigError(f"run.{key}: must be a nonempty list of numbers")
        out[key] = [float(e) for e in v]
    if any(th == 0 for th in out["thetas"]):
        raise ConfigError("run.thetas: values must be nonzero")
    if any(not 0 <= f < 1 for f in out["t_fractions"]):
        raise ConfigError("run.t_fractions: values must lie in [0, 1)")
    return out


def load_config(path) -> dict:
    """Parse a TOML file into a plain dict (``{}`` when ``path`` is None)."""
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config: file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config: {exc}") from exc
