"""Risk-sensitive mean-field control under partial observation.

Simulation of the measure-changed state system, the LQ closed form
(Riccati gains and filtering) and Monte Carlo checks of the maximum
principle's optimality conditions.
"""

__version__ = "0.1.0"

from .model import LqSpec, ModelSpec, TimeGrid, default_lq, expand_lq, validate_model
from .riccati import RiccatiSolution, solve, solve_case1, solve_case2

__all__ = [
    "LqSpec", "ModelSpec", "TimeGrid", "default_lq", "expand_lq", "validate_model",
    "RiccatiSolution", "solve", "solve_case1", "solve_case2", "__version__",
]
