"""Control policies driven by the observation record.

A policy is any object with the four methods of :class:`ControlPolicy`.
:func:`rsmfc.sde.evolve_system` calls ``start`` once, then per step
``control`` (before the Euler update) and ``observe`` (after it, with that
step's observation increment).  Because ``control`` may only use what was
observed up to the current node, every policy here is adapted to ``F^Y``.
"""

from __future__ import annotations

import numpy as np

from .filtering import FilterCoefficients, filter_coefficients, filter_step
from .model import LqSpec, TimeGrid
from .riccati import RiccatiSolution


class ControlPolicy:
    label = "policy"

    def start(self, n_paths: int, grid: TimeGrid) -> None:
        pass

    def control(self, k: int, t: float, x, m: float):
        raise NotImplementedError

    def observe(self, k: int, t: float, dy, u) -> None:
        pass

    def diagnostics(self) -> dict:
        return {}


class ConstantControl(ControlPolicy):
    def __init__(self, value: float = 0.0):
        self.value = float(value)
        self.label = f"constant({self.value:g})"

    def control(self, k, t, x, m):
        return self.value


class OpenLoopControl(ControlPolicy):
    """Deterministic control sequence, one value per step."""

    label = "open-loop"

    def __init__(self, values):
        self.values = np.asarray(values, float)

    def start(self, n_paths, grid):
        if self.values.shape != (grid.n_steps,):
            raise ValueError("open-loop control needs one value per step")

    def control(self, k, t, x, m):
        return self.values[k]


class LqFeedback(ControlPolicy):
    """``u = -b (1 + kappa) gamma(t) pi_t`` with ``pi`` the LQ filter of each path's record.

    Parameters
    ----------
    spec, sol : LQ scenario and its Riccati gain.
    form : filter form passed to :func:`rsmfc.filtering.filter_coefficients`.
    gain_scale : multiplies the feedback gain (``1 + kappa`` for gain perturbations).
    needle : optional ``(tau, eps, delta)``; adds ``delta`` to the control on
        the steps with ``tau <= t_k < tau + eps``.
    record : keep the per-path filter means for :meth:`diagnostics`.
    """

    def __init__(self, spec: LqSpec, sol: RiccatiSolution, form: str = "scaled-gain",
                 gain_scale: float = 1.0, needle=None, record: bool = False,
                 coeffs: FilterCoefficients | None = None):
        self.spec = spec
        self.sol = sol
        self.coeffs = filter_coefficients(spec, sol, form) if coeffs is None else coeffs
        self.gain_scale = float(gain_scale)
        self.needle = needle
        self.record = record
        self.label = f"lq-case{sol.case_id}-{self.coeffs.form}"
        if gain_scale != 1.0:
            self.label += f"-gain{gain_scale:g}"
        if needle is not None:
            self.label += "-needle({:g},{:g},{:g})".format(*needle)
        self._pi = None
        self._trace = None

    def start(self, n_paths, grid):
        if grid.n_steps != self.sol.grid.n_steps or grid.horizon != self.sol.grid.horizon:
            raise ValueError("simulation grid differs from the Riccati grid")
        self._pi = np.full(n_paths, float(self.spec.x0))
        self._trace = np.empty((n_paths, grid.n_steps + 1)) if self.record else None
        if self.record:
            self._trace[:, 0] = self._pi

    def _bump(self, t):
        if self.needle is None:
            return 0.0
        tau, eps, delta = self.needle
        return delta if tau <= t < tau + eps else 0.0

    def control(self, k, t, x, m):
        raw = -self.spec.b_gain * self.gain_scale * self.sol.gamma[k] * self._pi + self._bump(t)
        return np.clip(raw, self.spec.u_lo, self.spec.u_hi)

    def observe(self, k, t, dy, u):
        self._pi = filter_step(self.coeffs, self.spec.b_gain, k, self._pi, u, dy, self.sol.grid.dt)
        if self.record:
            self._trace[:, k + 1] = self._pi

    def diagnostics(self):
        return {"filter_mean": self._trace} if self.record else {}


def filter_feedback(spec: LqSpec, sol: RiccatiSolution, gain_scale: float = 1.0):
    """Control callback for :func:`rsmfc.filtering.particle_filter`: ``-b gamma`` times its own mean."""
    b = spec.b_gain * gain_scale

    def control(k, t, mean, var):
        return -b * sol.gamma[k] * mean

    return control


def ansatz_ell(sol: RiccatiSolution):
    """Loadings ``ell = (xi_1(t) x, xi_2(t) x)`` of the chosen Riccati case."""
    xi1, xi2 = sol.xi()

    def ell(k, t, x):
        return xi1[k] * x, xi2[k] * x

    return ell
