"""Backward Riccati equations for the LQ feedback gain.

Two choices of the loading functions give two scalar equations for the gain
``gamma`` (terminal value 1); both are integrated backward from ``T`` with
fixed-step classical RK4 on the shared time grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import LqSpec, TimeGrid

BLOWUP_THRESHOLD = 1.0e8


class RiccatiBlowUp(ArithmeticError):
    def __init__(self, case: int, t_escape: float):
        super().__init__(f"Riccati case {case}: |gamma| exceeded {BLOWUP_THRESHOLD:g} "
                         f"near t={t_escape:.6g} (integrating backward from T)")
        self.case = case
        self.t_escape = t_escape


def _coefficients(spec: LqSpec, case: int) -> tuple[float, float, float]:
    """``(k0, k1, k2)`` with ``gamma' = -(k0 + k1 gamma + k2 gamma^2)``."""
    c, b, al, be, sg, th = spec.c, spec.b_gain, spec.alpha, spec.beta, spec.sigma, spec.theta
    if not th > 0:
        raise ValueError("Riccati equations need theta > 0")
    if case == 1:
        return be - be * be / th, 2.0 * c + th * (al + sg), -b * b
    if case == 2:
        return -be * be / th, 2.0 * c + be, th * (al + sg) - b * b
    raise ValueError(f"case must be 1 or 2, got {case!r}")


def gamma_rhs(spec: LqSpec, case: int, gamma):
    """Time derivative of the gain implied by the Riccati equation."""
    k0, k1, k2 = _coefficients(spec, case)
    return -(k0 + k1 * gamma + k2 * gamma * gamma)


@dataclass(frozen=True)
class RiccatiSolution:
    case_id: int
    gamma: np.ndarray
    lam: float
    params: LqSpec
    grid: TimeGrid

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def xi(self) -> tuple[np.ndarray, np.ndarray]:
        """Loading functions on the grid: ones for case 1, the gain for case 2."""
        if self.case_id == 1:
            ones = np.ones_like(self.gamma)
            return ones, ones
        return self.gamma.copy(), self.gamma.copy()


def _solve(spec: LqSpec, grid: TimeGrid, case: int) -> RiccatiSolution:
    k0, k1, k2 = _coefficients(spec, case)

    def f(g):
        return -(k0 + k1 * g + k2 * g * g)

    n = grid.n_steps
    h = -grid.dt
    times = grid.times
    gamma = np.empty(n + 1)
    gamma[n] = 1.0
    g = 1.0
    for k in range(n, 0, -1):
        s1 = f(g)
        s2 = f(g + 0.5 * h * s1)
        s3 = f(g + 0.5 * h * s2)
        s4 = f(g + h * s3)
        g = g + h * (s1 + 2.0 * s2 + 2.0 * s3 + s4) / 6.0
        if not (np.isfinite(g) and abs(g) <= BLOWUP_THRESHOLD):
            raise RiccatiBlowUp(case, times[k - 1])
        gamma[k - 1] = g
    return RiccatiSolution(case_id=case, gamma=gamma, lam=1.0 / spec.theta, params=spec, grid=grid)


def solve_case1(spec: LqSpec, grid: TimeGrid) -> RiccatiSolution:
    """Gain for loadings ``ell = (x, x)``."""
    return _solve(spec, grid, 1)


def solve_case2(spec: LqSpec, grid: TimeGrid) -> RiccatiSolution:
    """Gain for loadings ``ell = gamma (x, x)``."""
    return _solve(spec, grid, 2)


def solve(spec: LqSpec, grid: TimeGrid, case: int) -> RiccatiSolution:
    return _solve(spec, grid, case)


def riccati_residual(sol: RiccatiSolution, grid: TimeGrid | None = None) -> float:
    """Largest ODE residual at the cell midpoints.

    The solution is interpolated by the cubic Hermite polynomial through the
    node values and the node slopes given by the ODE right-hand side.
    """
    grid = sol.grid if grid is None else grid
    g = sol.gamma
    if g.shape != (grid.n_steps + 1,):
        raise ValueError("solution and grid sizes differ")
    h = grid.dt
    s = gamma_rhs(sol.params, sol.case_id, g)
    g0, g1, s0, s1 = g[:-1], g[1:], s[:-1], s[1:]
    g_mid = 0.5 * (g0 + g1) + h * (s0 - s1) / 8.0
    dg_mid = 1.5 * (g1 - g0) / h - 0.25 * (s0 + s1)
    return float(np.max(np.abs(dg_mid - gamma_rhs(sol.params, sol.case_id, g_mid))))
