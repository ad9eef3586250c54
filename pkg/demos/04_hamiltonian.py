"""
Hamiltonians and the adjoint transform
======================================

The risk-sensitive Hamiltonian reduces to the risk-neutral one at
``theta = 0``.  After the transform ``p_hat = p / (theta v)`` it also
reproduces the augmented three-state Hamiltonian.
"""

import numpy as np

from rsmfc.hamiltonian import AdjointState, eval_H_aug, eval_H_rn, eval_H_rs, transform_adjoint
from rsmfc.model import default_lq, expand_lq

spec = default_lq()
model = expand_lq(spec)
rng = np.random.default_rng(0)
n = 5
t, rho = rng.uniform(0, 1, n), rng.uniform(0.5, 2, n)
x, m, u = rng.normal(size=(3, n))
p, ell = rng.normal(size=(2, n)), rng.normal(size=(2, n))
q = rng.normal(size=(2, 2, n))
v = rng.uniform(0.5, 2, n)

adj = AdjointState(p, q, ell, v)
print("theta = 0 limit:", np.array_equal(eval_H_rs(model, t, rho, x, m, u, adj, theta=0.0),
                                          eval_H_rn(model, t, rho, x, m, u, p, q)))

th = model.theta
ph, qh = transform_adjoint(p, q, v, ell, th)
lhs = th * v * eval_H_rs(model, t, rho, x, m, u, AdjointState(ph, qh, ell, v))
rhs = eval_H_aug(model, t, rho, x, m, u, np.vstack([p, -th * v]), np.concatenate([q, np.zeros((1, 2, n))]))
print("transformed vs augmented:", np.abs(lhs - rhs).max())

###############################################################################
# In the LQ model the Hamiltonian is a concave parabola in u with vertex at
# ``b p_2``.
one = AdjointState(p[:, 0], q[:, :, 0], ell[:, 0], v[0])
u_star = spec.b_gain * p[1, 0]
for du in (-1.0, -0.5, 0.0, 0.5, 1.0):
    dH = eval_H_rs(model, 0.5, 1.0, 0.3, 0.0, u_star + du, one) - eval_H_rs(model, 0.5, 1.0, 0.3, 0.0, u_star, one)
    print(f"u - u* = {du:+.1f}: H difference {float(dH):+.4f}")
