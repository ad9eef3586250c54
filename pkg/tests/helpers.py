"""Scenarios shared by the test modules."""

import numpy as np

from rsmfc.model import ModelSpec


def smooth_model(theta=0.7, coeff_bound_C=None, x0=0.4):
    """Nonlinear model with bounded costs (|f| <= 0.7, |h| <= 1) and hand-derived partials."""
    partials = {
        "b_x": lambda t, x, m, u: 0.3 * np.cos(x) - 0.1 * u * np.sin(x),
        "b_m": lambda t, x, m, u: -0.2 + 0.0 * x,
        "sigma_x": lambda t, x, m: 0.2 * x / np.sqrt(1 + x * x),
        "sigma_m": lambda t, x, m: 0.05 * np.cos(m) + 0.0 * x,
        "alpha_x": lambda t, x, m: 0.1 * (1 - np.tanh(x) ** 2),
        "alpha_m": lambda t, x, m: 0.03 + 0.0 * x,
        "beta_x": lambda t, x: 0.6 * np.cos(x),
        "f_x": lambda t, x, m, u: 0.3 * m * np.cos(x * m) + 0.4 * u * (1 - np.tanh(u * x) ** 2),
        "f_m": lambda t, x, m, u: 0.3 * x * np.cos(x * m),
        "h_x": lambda x, m: np.cos(x + 0.5 * m),
        "h_m": lambda x, m: 0.5 * np.cos(x + 0.5 * m),
    }
    return ModelSpec(
        drift_b=lambda t, x, m, u: 0.3 * np.sin(x) - 0.2 * m + u * (1 + 0.1 * np.cos(x)),
        diff_sigma=lambda t, x, m: 0.3 + 0.2 * np.sqrt(1 + x * x) + 0.05 * np.sin(m),
        diff_alpha=lambda t, x, m: 0.25 + 0.1 * np.tanh(x) + 0.03 * m,
        obs_beta=lambda t, x: 0.6 * np.sin(x),
        run_cost_f=lambda t, x, m, u: 0.3 * np.sin(x * m) + 0.4 * np.tanh(u * x),
        term_cost_h=lambda x, m: np.sin(x + 0.5 * m),
        partials=partials,
        theta=theta,
        horizon_T=1.0,
        x0=x0,
        coeff_bound_C=coeff_bound_C,
        label="smooth",
    )


def zero_partials():
    z3 = lambda t, x, m: 0.0 * x  # noqa: E731
    z4 = lambda t, x, m, u: 0.0 * x  # noqa: E731
    return {"b_x": z4, "b_m": z4, "sigma_x": z3, "sigma_m": z3, "alpha_x": z3, "alpha_m": z3,
            "beta_x": lambda t, x: 0.0 * x, "f_x": z4, "f_m": z4,
            "h_x": lambda x, m: 0.0 * x, "h_m": lambda x, m: 0.0 * x}


def simple_model(b=None, sigma=0.0, alpha=0.0, beta=0.0, f=None, h=None, theta=1.0, T=1.0, x0=1.0,
                 coeff_bound_C=None):
    """Constant-coefficient model; partials are zeros (only for tests that do not audit them)."""
    return ModelSpec(
        drift_b=b or (lambda t, x, m, u: 0.0 * x),
        diff_sigma=lambda t, x, m: 0.0 * x + sigma,
        diff_alpha=lambda t, x, m: 0.0 * x + alpha,
        obs_beta=lambda t, x: 0.0 * x + beta,
        run_cost_f=f or (lambda t, x, m, u: 0.0 * x),
        term_cost_h=h or (lambda x, m: 0.0 * x),
        partials=zero_partials(),
        theta=theta,
        horizon_T=T,
        x0=x0,
        coeff_bound_C=coeff_bound_C,
    )
