"""
Certifying the maximum principle
================================

For each recorded observation path a particle filter supplies conditional
expectations of the Hamiltonian difference ``H(u) - H(u_bar)``.  At the
candidate feedback it should never be positive, and in the LQ model it
collapses to ``-(u - u_bar)^2 / 2``.
"""

import numpy as np

from rsmfc.model import TimeGrid, default_lq
from rsmfc.montecarlo import certify_smp, check_variational_inequality, smp_filter_runs
from rsmfc.riccati import solve

spec = default_lq()
sol = solve(spec, TimeGrid(200, spec.horizon_T), 2)

rep = certify_smp(spec, sol, n_records=4, n_particles=4000, seed=2)
print(f"{len(rep.cells)} cells, {len(rep.violations)} violations, ok = {rep.ok}")
worst = max(abs(c.estimate - c.analytic) for c in rep.cells)
print("largest gap to the analytic parabola:", worst)

###############################################################################
# A deliberately wrong candidate (shifted by 0.5) is caught.
runs, _ = smp_filter_runs(spec, sol, 2, 2000, 3)
wrong = lambda k, mean: -spec.b_gain * sol.gamma[k] * mean + 0.5  # noqa: E731
bad = check_variational_inequality(spec, sol, runs, np.linspace(-2, 2, 9), [20, 100, 180], candidate=wrong)
print("violations with the shifted candidate:", len(bad.violations))
