"""Linear backward solver under frozen drift/diffusion fields.

Computes model prices, dual-objective gradients and the running primal
cost by solving

    d_t u + alpha d_x u + (beta/2) d_xx u + f = 0

backward with the same stencil, boundary rows and block couplings as
the nonlinear solver (hjb).  Because the stencil is shared verbatim,
values produced here are exact derivatives of the discrete dual
objective up to the policy-iteration tolerance.

Independent problems over the same fields share one matrix
factorization per time step (multi right-hand-side solve).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import hjb
from . import instruments as ins
from . import statespace as ss
from .cost import CostSpec, penalty
from .errors import ContractViolationError


@dataclass(eq=False)
class LinearProblem:
    """One backward linear solve: fields, source and jump data.

    alpha and beta may be scalars, (n_blocks, n_x) arrays or full
    (n_t, n_blocks, n_x) per-step arrays; source likewise (default 0).
    jumps maps maturity time -> payoff stack added to u when stepping
    past that knot.
    """

    grid: ss.StateGrid
    alpha: object
    beta: object
    source: object = 0.0
    jumps: dict = field(default_factory=dict)


def _per_step(values, n_t: int, nb: int, nx: int, name: str):
    """Normalize a field spec to an indexable per-step view."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0 or arr.shape == (nb, nx):
        return lambda n: np.broadcast_to(arr, (nb, nx))
    if arr.shape == (n_t, nb, nx):
        return lambda n: arr[n]
    raise ContractViolationError(
        f"{name} field shape {arr.shape} does not match the grid "
        f"({n_t} steps, {nb} blocks, {nx} nodes)")


def _knot_jumps(grid: ss.StateGrid, jumps: dict) -> dict:
    out = {}
    for t, stack in jumps.items():
        if t not in grid.time.maturity_index:
            raise ContractViolationError(f"jump time {t} is not a grid maturity")
        k = grid.time.maturity_index[t]
        stack = np.asarray(stack, dtype=float)
        if stack.shape != (grid.n_blocks, grid.spot.n_x):
            raise ContractViolationError(
                f"jump stack at t={t} has shape {stack.shape}")
        out[k] = out.get(k, 0.0) + stack
    return out


def sweep(grid: ss.StateGrid, alpha, beta, problems: Sequence[tuple],
          keep_surfaces: bool = False):
    """Backward sweep for several problems over shared fields.

    problems is a sequence of (jumps_by_knot, source_fn) pairs where
    source_fn(n) returns the source stack for step n (or None).  Returns
    (values_at_start, surfaces) where surfaces is None unless requested.
    """
    nb, nx = grid.n_blocks, grid.spot.n_x
    n_t = grid.time.n_t
    knots = grid.time.knots
    k = len(problems)
    alpha_at = _per_step(alpha, n_t, nb, nx, "alpha")
    beta_at = _per_step(beta, n_t, nb, nx, "beta")

    u = np.zeros((nb, nx, k))
    surfaces = np.zeros((n_t + 1, nb, nx, k)) if keep_surfaces else None

    def apply_jumps(knot):
        for j, (jumps, _) in enumerate(problems):
            if knot in jumps:
                u[:, :, j] += jumps[knot]

    apply_jumps(n_t)
    for j in range(k):
        ss.fill_extension(grid, u[:, :, j])
    if keep_surfaces:
        surfaces[n_t] = u

    for n in range(n_t - 1, -1, -1):
        dt = float(knots[n + 1] - knots[n])
        rhs = u.copy()
        for j, (_, source_fn) in enumerate(problems):
            if source_fn is not None:
                rhs[:, :, j] += dt * source_fn(n)
        op = hjb.assemble_step(grid, alpha_at(n), beta_at(n), dt)
        u = hjb.step_implicit(op, rhs)
        apply_jumps(n)
        for j in range(k):
            ss.fill_extension(grid, u[:, :, j])
        if keep_surfaces:
            surfaces[n] = u

    start = u[grid.initial_block, grid.spot.ix0, :]
    return np.array(start), surfaces


def solve_linear(problem: LinearProblem):
    """Solve one LinearProblem; returns (value at t=0 initial state, Surface)."""
    grid = problem.grid
    jumps = _knot_jumps(grid, problem.jumps)
    src = np.asarray(problem.source, dtype=float)
    if src.ndim == 0 and float(src) == 0.0:
        source_fn = None
    else:
        source_fn = _per_step(problem.source, grid.time.n_t, grid.n_blocks,
                              grid.spot.n_x, "source")
    values, surfaces = sweep(grid, problem.alpha, problem.beta,
                             [(jumps, source_fn)], keep_surfaces=True)
    surface = ss.Surface("linear", grid.time.knots.copy(),
                         surfaces[:, :, :, 0], grid)
    return float(values[0]), surface


def model_prices(solution: hjb.DualSolution, insts: Sequence[ins.Instrument],
                 grid: ss.StateGrid) -> np.ndarray:
    """Reprice every instrument under the calibrated fields.

    One linear solve per instrument with jump +payoff at its maturity,
    all sharing the per-step factorization.
    """
    if solution.grid is not grid:
        raise ContractViolationError("solution and grid do not match")
    problems = []
    for inst in insts:
        knot = grid.time.maturity_index[inst.maturity]
        problems.append(({knot: ss.jump_stack(grid, inst)}, None))
    beta = solution.beta.values
    values, _ = sweep(grid, -0.5 * beta, beta, problems)
    return values


def primal_cost(solution: hjb.DualSolution, cost_spec: CostSpec,
                grid: ss.StateGrid) -> float:
    """Expected integrated penalty E int F(beta) dt under the model."""
    if solution.grid is not grid:
        raise ContractViolationError("solution and grid do not match")
    beta = solution.beta.values
    cost_rate = penalty(cost_spec, beta)
    values, _ = sweep(grid, -0.5 * beta, beta,
                      [({}, lambda n: cost_rate[n])])
    return float(values[0])
