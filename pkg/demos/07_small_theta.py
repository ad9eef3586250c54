"""
Small risk-sensitivity expansion
================================

For small ``theta``, ``log J / theta`` is the mean cost plus ``theta / 2``
times its variance.  The residual left after those two terms shrinks like
``theta^2``.
"""

from rsmfc.model import TimeGrid, default_lq, expand_lq
from rsmfc.montecarlo import theta_expansion_check
from rsmfc.policies import LqFeedback
from rsmfc.riccati import solve

spec = default_lq()
sol = solve(spec, TimeGrid(200, spec.horizon_T), 1)
thetas = [0.05, 0.1, 0.2, 0.4]
tab = theta_expansion_check(expand_lq(spec), LqFeedback(spec, sol), thetas, 50_000, seed=7)
for r in tab.rows:
    print(f"theta {r.theta:4.2f}: residual {r.residual:.3e}")
print(f"log-log slope {tab.slope:.2f}")
