"""Outer maximization of the dual objective over the multipliers.

The dual value lambda -> -lambda.c - phi(0, X0) is concave; its
gradient is the vector of price errors (model minus target), so the
optimum is exactly the multiplier vector that reprices every target.
Plain gradient ascent with Armijo backtracking is the default; a BFGS
inverse-Hessian accumulation can be switched on for stiff instrument
sets.  Stopping is on the weighted sup-norm of price errors, the
financial convergence criterion.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import hjb, linpde
from . import instruments as ins
from . import statespace as ss
from .cost import CostSpec
from .errors import ConfigurationError

ARMIJO_MIN_STEP = 1e-14


@dataclass(frozen=True)
class OptConfig:
    tol_price: float = 1e-6
    max_outer_iters: int = 200
    c1: float = 1e-4
    shrink: float = 0.5
    use_bfgs: bool = False


@dataclass(eq=False)
class CalibrationReport:
    """Everything a desk needs to audit one calibration."""

    converged: bool
    lambda_star: np.ndarray
    model_prices: np.ndarray
    price_errors: np.ndarray
    dual_value: float
    primal_cost: float
    duality_gap: float
    iterations: int
    trace: list                      # per accepted iterate: (dual value, max weighted error)
    instruments: list
    grid: ss.StateGrid
    solution: hjb.DualSolution
    sigma: ss.Surface
    was_call: list = field(default_factory=list)


def objective(lam, cost_spec: CostSpec, insts: Sequence[ins.Instrument],
              grid: ss.StateGrid):
    """Dual value and its gradient at one multiplier vector.

    value = -lambda.c - phi(0, X0); gradient_i = model_price_i - c_i,
    an ascent direction for the dual.
    """
    value, grad, _, _ = _objective_full(lam, cost_spec, insts, grid)
    return value, grad


def _objective_full(lam, cost_spec, insts, grid, warm=None, solution=None):
    lam = np.asarray(lam, dtype=float)
    if solution is None:
        solution = hjb.solve_dual(cost_spec, insts, lam, grid, beta_warm=warm)
    prices = linpde.model_prices(solution, insts, grid)
    targets = np.array([i.target_price for i in insts])
    value = float(-lam @ targets - solution.value_at_start())
    return value, prices - targets, solution, prices


def _ascend(lam0, cost_spec, insts, grid, opt_config, targets, weights):
    """Armijo-backtracked ascent of the dual from lam0 on one grid."""
    m = len(insts)
    lam = np.asarray(lam0, dtype=float).copy()
    value, errors, solution, prices = _objective_full(
        lam, cost_spec, insts, grid)
    trace = [(value, float(np.max(weights * np.abs(errors))))]

    h_inv = np.eye(m)
    first_update = True
    step0 = 1.0
    iterations = 0
    converged = False

    while True:
        max_err = float(np.max(weights * np.abs(errors)))
        if max_err < opt_config.tol_price:
            converged = True
            break
        if iterations >= opt_config.max_outer_iters:
            break

        # ascent direction (min-convention BFGS on -value)
        g_min = -errors
        direction = h_inv @ errors if opt_config.use_bfgs else errors.copy()
        slope = -g_min @ direction
        if slope <= 0.0:
            # stale curvature; fall back to steepest ascent
            direction = errors.copy()
            slope = errors @ errors

        step = step0
        accepted = False
        warm = solution.beta.values
        while step >= ARMIJO_MIN_STEP:
            trial = lam + step * direction
            trial_solution = hjb.solve_dual(cost_spec, insts, trial, grid,
                                            beta_warm=warm)
            trial_value = float(-trial @ targets - trial_solution.value_at_start())
            if trial_value >= value + opt_config.c1 * step * slope:
                accepted = True
                break
            step *= opt_config.shrink
        if not accepted:
            break

        new_value, new_errors, solution, prices = _objective_full(
            trial, cost_spec, insts, grid, solution=trial_solution)
        if opt_config.use_bfgs:
            s_vec = trial - lam
            y_vec = (-new_errors) - g_min
            sy = float(s_vec @ y_vec)
            if sy > 1e-12 * np.linalg.norm(s_vec) * np.linalg.norm(y_vec):
                if first_update:
                    h_inv = np.eye(m) * (sy / float(y_vec @ y_vec))
                    first_update = False
                rho = 1.0 / sy
                left = np.eye(m) - rho * np.outer(s_vec, y_vec)
                h_inv = left @ h_inv @ left.T + rho * np.outer(s_vec, s_vec)
            step0 = 1.0
        else:
            # grow the step while full steps keep being accepted
            step0 = step * 2.0 if step == step0 else step

        lam, value, errors = trial, new_value, new_errors
        iterations += 1
        trace.append((value, float(np.max(weights * np.abs(errors)))))

    return lam, value, errors, solution, prices, iterations, trace, converged


def calibrate(instruments: Sequence[ins.Instrument], cost_spec: CostSpec,
              grid_config: ss.GridConfig, opt_config: Optional[OptConfig] = None,
              *, spot: float = 1.0) -> CalibrationReport:
    """Calibrate the volatility model to reprice every instrument exactly.

    Starts from lambda = 0 (the reference-volatility model) and ascends
    the dual with PDE-computed gradients until the weighted price errors
    fall below tol_price.  Non-convergence returns a report with
    converged=False and the trace; it does not raise.
    """
    if opt_config is None:
        opt_config = OptConfig()
    if not instruments:
        raise ConfigurationError("instrument list must not be empty")
    converted, was_call = ins.convert_calls_to_puts(list(instruments), spot)
    for inst in converted:
        ins.validate_instrument(inst, spot)
    ins.check_target_bounds(converted, spot)

    grid = ss.build_grid(grid_config, converted, spot, cost_spec.sigma_bar)
    targets = np.array([i.target_price for i in converted])
    weights = np.array([i.weight for i in converted])
    m = len(converted)

    lam = np.zeros(m)
    (lam, value, errors, solution, prices,
     iterations, trace, converged) = _ascend(
        lam, cost_spec, converted, grid, opt_config, targets, weights)

    primal = linpde.primal_cost(solution, cost_spec, grid)
    gap = abs(primal + float(lam @ errors) - value)
    sigma = hjb.extract_vol(solution)
    return CalibrationReport(
        converged=converged, lambda_star=lam, model_prices=prices,
        price_errors=errors, dual_value=value, primal_cost=primal,
        duality_gap=gap, iterations=iterations, trace=trace,
        instruments=converted, grid=grid, solution=solution, sigma=sigma,
        was_call=was_call)
