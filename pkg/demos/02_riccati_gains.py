"""
Feedback gains from the Riccati equation
========================================

The linear-quadratic scenario has two loading ansatzes, each with its own
scalar Riccati equation for the gain ``gamma``.  Both are integrated
backwards from ``gamma(T) = 1`` with fixed-step RK4.
"""

import numpy as np

from rsmfc.model import TimeGrid, default_lq
from rsmfc.riccati import RiccatiBlowUp, riccati_residual, solve

spec = default_lq()
grid = TimeGrid(200, spec.horizon_T)

for case in (1, 2):
    sol = solve(spec, grid, case)
    print(f"case {case}: gamma(0) = {sol.gamma[0]:.10f}, residual {riccati_residual(sol):.1e}")

###############################################################################
# Fourth order: each halving of the step cuts the error by about 16.
ref = solve(spec, TimeGrid(6400, 1.0), 1).gamma[0]
errs = [abs(solve(spec, TimeGrid(n, 1.0), 1).gamma[0] - ref) for n in (25, 50, 100)]
print("error ratios:", np.round([errs[0] / errs[1], errs[1] / errs[2]], 2))

###############################################################################
# Strong risk aversion can make the second equation explode before t = 0.
try:
    solve(default_lq(theta=40.0, horizon_T=5.0), TimeGrid(500, 5.0), 2)
except RiccatiBlowUp as exc:
    print("blow-up:", exc)
