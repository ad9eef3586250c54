import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import simple_model, smooth_model
from rsmfc.hamiltonian import (AdjointState, bsde_consistency, eval_H_aug, eval_H_rn, eval_H_rs,
                               eval_H_rs_partials, inverse_transform_adjoint, lq_adjoint_state,
                               lq_adjoints, lq_control, transform_adjoint)
from rsmfc.lq_value import exact_loadings, lq_policy_value
from rsmfc.model import TimeGrid, default_lq, expand_lq
from rsmfc.policies import ConstantControl, LqFeedback
from rsmfc.riccati import solve, solve_case1
from rsmfc.sde import evolve_system, evolve_vtheta, generate_drivers, terminal_weight

finite = st.floats(-3.0, 3.0, allow_nan=False)


def probe(rng, n):
    return dict(t=rng.uniform(0, 1, n), rho=rng.uniform(0.2, 3.0, n), x=rng.normal(0, 1.5, n),
                m=rng.normal(0, 1.5, n), u=rng.normal(0, 1.5, n), p=rng.normal(size=(2, n)),
                q=rng.normal(size=(2, 2, n)), ell=rng.normal(size=(2, n)), v=rng.uniform(0.1, 5.0, n))


@settings(max_examples=60, deadline=None)
@given(t=st.floats(0, 1), rho=st.floats(0.01, 5), x=finite, m=finite, u=finite,
       p=st.tuples(finite, finite), q=st.tuples(finite, finite, finite, finite), ell=st.tuples(finite, finite))
def test_risk_neutral_limit_is_exact(t, rho, x, m, u, p, q, ell):
    model = smooth_model()
    qm = np.array(q).reshape(2, 2)
    adj = AdjointState(np.array(p), qm, np.array(ell))
    assert eval_H_rs(model, t, rho, x, m, u, adj, theta=0.0) == eval_H_rn(model, t, rho, x, m, u, p, qm)


def test_transformed_hamiltonian_equals_augmented():
    model = smooth_model(theta=0.7)
    rng = np.random.default_rng(1)
    P = probe(rng, 1000)
    th = model.theta
    p_hat, q_hat = transform_adjoint(P["p"], P["q"], P["v"], P["ell"], th)
    lhs = th * P["v"] * eval_H_rs(model, P["t"], P["rho"], P["x"], P["m"], P["u"],
                                  AdjointState(p_hat, q_hat, P["ell"], P["v"]))
    p3 = np.vstack([P["p"], -th * P["v"]])
    q3 = np.concatenate([P["q"], rng.normal(size=(1, 2, 1000))], axis=0)
    rhs = eval_H_aug(model, P["t"], P["rho"], P["x"], P["m"], P["u"], p3, q3)
    assert np.max(np.abs(lhs - rhs) / np.maximum(1.0, np.abs(rhs))) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(p=st.tuples(finite, finite), q=st.tuples(finite, finite, finite, finite),
       ell=st.tuples(finite, finite), v=st.floats(0.05, 20), theta=st.floats(0.05, 3))
def test_transform_round_trip(p, q, ell, v, theta):
    p, q, ell = np.array(p), np.array(q).reshape(2, 2), np.array(ell)
    ph, qh = transform_adjoint(p, q, v, ell, theta)
    p2, q2 = inverse_transform_adjoint(ph, qh, v, ell, theta)
    assert np.max(np.abs(p2 - p)) <= 1e-12 and np.max(np.abs(q2 - q)) <= 1e-12


def test_transform_scalar_identity():
    model = smooth_model(theta=1.3)
    p, q, ell, v = np.array([0.4, -1.2]), np.array([[0.3, -0.7], [1.1, 0.2]]), np.array([0.5, -0.8]), 2.2
    ph, qh = transform_adjoint(p, q, v, ell, model.theta)
    lhs = model.theta * v * eval_H_rs(model, 0.3, 1.4, 0.2, -0.5, 0.9, AdjointState(ph, qh, ell, v))
    rhs = eval_H_aug(model, 0.3, 1.4, 0.2, -0.5, 0.9, np.r_[p, -model.theta * v], np.vstack([q, [0.0, 0.0]]))
    assert abs(lhs - rhs) <= 1e-12


def test_nonpositive_v_rejected():
    with pytest.raises(ValueError):
        AdjointState(np.zeros(2), np.zeros((2, 2)), np.zeros(2), v=0.0)
    with pytest.raises(ValueError):
        transform_adjoint(np.zeros(2), np.zeros((2, 2)), -1.0, np.zeros(2), 1.0)
    with pytest.raises(ValueError):
        inverse_transform_adjoint(np.zeros(2), np.zeros((2, 2)), 0.0, np.zeros(2), 1.0)


def test_partials_match_finite_differences():
    model = smooth_model(theta=0.7)
    rng = np.random.default_rng(2)
    P = probe(rng, 1000)
    adj = AdjointState(P["p"], P["q"], P["ell"])
    Hx, Hm, Hr = eval_H_rs_partials(model, P["t"], P["rho"], P["x"], P["m"], P["u"], adj)
    args = ("t", "rho", "x", "m", "u")

    def H(**kw):
        a = {k: P[k] for k in args}
        a.update(kw)
        return eval_H_rs(model, *(a[k] for k in args), adj)

    for name, exact in (("x", Hx), ("m", Hm), ("rho", Hr)):
        h = 1e-5 * np.maximum(1.0, np.abs(P[name]))
        fd = (H(**{name: P[name] + h}) - H(**{name: P[name] - h})) / (2 * h)
        rel = np.abs(fd - exact) / np.maximum(1.0, np.abs(exact))
        assert rel.max() <= 1e-5, (name, rel.max())


def test_lq_hamiltonian_concave_with_vertex_at_b_p2():
    spec = default_lq()
    model = expand_lq(spec)
    rng = np.random.default_rng(3)
    P = probe(rng, 200)
    adj = AdjointState(P["p"], P["q"], P["ell"])
    u_star = spec.b_gain * P["p"][1]
    base = eval_H_rs(model, P["t"], P["rho"], P["x"], P["m"], u_star, adj)
    for du in (-1.0, -0.1, 0.3, 2.0):
        diff = eval_H_rs(model, P["t"], P["rho"], P["x"], P["m"], u_star + du, adj) - base
        np.testing.assert_allclose(diff, -0.5 * du * du, atol=1e-12)
    # terms free of u cancel: changing rho, q, ell leaves the difference unchanged
    adj2 = AdjointState(P["p"], rng.normal(size=(2, 2, 200)), rng.normal(size=(2, 200)))
    d1 = eval_H_rs(model, 0.5, P["rho"], P["x"], 0.0, u_star + 0.7, adj) - eval_H_rs(model, 0.5, P["rho"], P["x"], 0.0, u_star, adj)
    d2 = eval_H_rs(model, 0.5, 2 * P["rho"], P["x"], 0.0, u_star + 0.7, adj2) - eval_H_rs(model, 0.5, 2 * P["rho"], P["x"], 0.0, u_star, adj2)
    np.testing.assert_allclose(d1, d2, atol=1e-12)


def test_lq_control_examples():
    g = TimeGrid(50, 1.0)
    s0 = default_lq(b_gain=0.0)
    u, _ = lq_control(s0, solve_case1(s0, g), 3.0, 10)
    assert u == 0.0
    spec = default_lq(b_gain=1.7)
    sol = solve_case1(spec, g)
    u, clamped = lq_control(spec, sol, 0.8, 50)
    assert u == -1.7 * 0.8 and not clamped
    # same value as b E[p2 | F^Y] with p2 = -gamma x
    x = np.random.default_rng(4).normal(size=1000)
    w = np.full(1000, 1e-3)
    u2, _ = lq_control(spec, sol, np.dot(w, x), 20)
    assert u2 == pytest.approx(spec.b_gain * np.dot(w, -sol.gamma[20] * x), rel=1e-12)


def test_lq_control_clamps():
    spec = default_lq(u_lo=-0.5, u_hi=0.5)
    u, clamped = lq_control(spec, solve_case1(spec, TimeGrid(10, 1.0)), 4.0, 3)
    assert u == -0.5 and clamped


def test_lq_adjoints_closed_form():
    spec = default_lq()
    sol = solve(spec, TimeGrid(20, 1.0), 2)
    rng = np.random.default_rng(5)
    rho, x = rng.uniform(0.5, 2, (4, 21)), rng.normal(size=(4, 21))
    a = lq_adjoints(spec, sol, rho, x)
    np.testing.assert_allclose(a.p1, -1.0 / rho)
    np.testing.assert_allclose(a.p2, -sol.gamma * x)
    np.testing.assert_allclose(a.q11, spec.beta * x / rho)
    assert np.all(a.q12 == 0)
    np.testing.assert_allclose(a.q21, np.broadcast_to(-spec.alpha * sol.gamma, x.shape))
    np.testing.assert_allclose(a.q22, np.broadcast_to(-spec.sigma * sol.gamma, x.shape))
    st_ = lq_adjoint_state(spec, sol, 7, rho[:, 7], x[:, 7])
    np.testing.assert_allclose(st_.ell[0], sol.gamma[7] * x[:, 7])


def test_bsde_trivial_case():
    model = simple_model(sigma=0.4, alpha=0.2, beta=0.0, theta=0.8)
    g = TimeGrid(20, 1.0)
    d = generate_drivers(g, 100, 1)
    tr = evolve_system(model, ConstantControl(0.0), d)
    v0 = float(np.mean(terminal_weight(tr, model)))
    zero = lambda k, t, x: (0.0 * x, 0.0 * x)  # noqa: E731
    chk = bsde_consistency(model, tr, evolve_vtheta(model, zero, d, tr, v0))
    assert v0 == 1.0
    assert np.all(chk.Z == np.log(v0) / model.theta)
    assert np.all(chk.terminal_residual == 0.0)


def test_bsde_initial_value():
    spec = default_lq()
    model = expand_lq(spec)
    g = TimeGrid(20, 1.0)
    sol = solve_case1(spec, g)
    d = generate_drivers(g, 500, 2)
    tr = evolve_system(model, LqFeedback(spec, sol), d)
    v0 = float(np.mean(terminal_weight(tr, model)))
    chk = bsde_consistency(model, tr, evolve_vtheta(model, lambda k, t, x: (x, x), d, tr, v0))
    np.testing.assert_allclose(chk.Z[:, 0], np.log(v0) / spec.theta, rtol=1e-15)


def _bsde_residual(n, n_paths=20_000, seed=1):
    spec = default_lq()
    model = expand_lq(spec)
    g = TimeGrid(n, 1.0)
    sol = solve_case1(spec, g)
    d = generate_drivers(g, n_paths, seed)
    tr = evolve_system(model, LqFeedback(spec, sol, record=True), d)
    ell = exact_loadings(spec, 1, g.times, tr.aux["filter_mean"])
    vp = evolve_vtheta(model, ell, d, tr, lq_policy_value(spec, 1).j_theta)
    return bsde_consistency(model, tr, vp)


def test_bsde_residual_shrinks_at_strong_order_half():
    res = [_bsde_residual(n).mean_abs_residual for n in (50, 100, 200)]
    ratios = [res[1] / res[0], res[2] / res[1]]
    # halving dt scales the pathwise error by about 2**-0.5
    assert all(0.6 <= r <= 0.8 for r in ratios), ratios
    assert abs(_bsde_residual(200).mean_residual) < 0.1 * res[2]
