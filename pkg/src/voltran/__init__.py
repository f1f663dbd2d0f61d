"""voltran: exact calibration of path-dependent volatility models.

Given target prices for European, lower-barrier and fixed-strike
lookback puts, the engine finds a volatility function of the reduced
path state (spot, barrier flags or running minimum) that reprices every
target exactly, by maximizing a concave dual over Lagrange multipliers
with gradients computed from a pair of backward PDE solves.
"""

from .calibrate import CalibrationReport, OptConfig, calibrate, objective
from .cost import CostSpec, conjugate, hstar, make_cost_spec, penalty
from .errors import (ConfigurationError, ContractViolationError, DomainError,
                     SolverError, UnsupportedFeatureError)
from .hjb import DualSolution, extract_vol, solve_dual
from .instruments import Instrument, StateSpaceKind, jump_times, payoff, required_state
from .linpde import LinearProblem, model_prices, primal_cost, solve_linear
from .mc import McConfig, McResult, simulate_and_price
from .statespace import (GridConfig, StateGrid, Surface, apply_lookback_boundary,
                         build_grid, couple_barrier_sheets)

__version__ = "0.1.0"

__all__ = [
    "CalibrationReport", "OptConfig", "calibrate", "objective",
    "CostSpec", "conjugate", "hstar", "make_cost_spec", "penalty",
    "ConfigurationError", "ContractViolationError", "DomainError",
    "SolverError", "UnsupportedFeatureError",
    "DualSolution", "extract_vol", "solve_dual",
    "Instrument", "StateSpaceKind", "jump_times", "payoff", "required_state",
    "LinearProblem", "model_prices", "primal_cost", "solve_linear",
    "McConfig", "McResult", "simulate_and_price",
    "GridConfig", "StateGrid", "Surface", "apply_lookback_boundary",
    "build_grid", "couple_barrier_sheets",
    "__version__",
]
