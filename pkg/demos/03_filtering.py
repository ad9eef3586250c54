"""
Filtering the hidden state
==========================

A weighted particle filter gives the conditional mean of ``x`` under the
tilted measure.  In the LQ scenario it is compared with two closed-form
recursions: the scaled-gain form and the tilted Kalman-Bucy form.
"""

import numpy as np

from rsmfc.filtering import closed_form_filter, gaussian_variance, particle_filter
from rsmfc.model import TimeGrid, default_lq, expand_lq
from rsmfc.policies import ansatz_ell, filter_feedback
from rsmfc.riccati import solve
from rsmfc.sde import generate_drivers

spec = default_lq()
model = expand_lq(spec)
grid = TimeGrid(200, spec.horizon_T)
sol = solve(spec, grid, 1)
y = generate_drivers(grid, 1, seed=3).dY[0]

pf = particle_filter(model, ansatz_ell(sol), y, 5000, seed=4, control=filter_feedback(spec, sol))
print("smallest ESS:", pf.ess.min().round(1))

for form in ("scaled-gain", "kalman"):
    cf = closed_form_filter(spec, sol, y, variance_source="particle", variance=pf.variance,
                            controls=pf.controls, form=form)
    rmse = np.sqrt(np.mean((cf.mean - pf.mean) ** 2))
    print(f"{form:12s} RMSE {rmse:.4f}  ({rmse / np.sqrt(np.mean(pf.se ** 2)):.1f} particle SE)")

###############################################################################
# The conditional law is Gaussian here, so the deterministic variance ODE
# tracks the particle variance.
V = gaussian_variance(spec, grid, *sol.xi())
print("max |V_ode - V_particle|:", np.abs(V - pf.variance).max().round(4))
