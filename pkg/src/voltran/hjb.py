"""Nonlinear dual PDE solver.

Solves, backward from the horizon,

    d_t phi + G*((d_xx phi - d_x phi) / 2) = 0,

with payoff jumps at maturities and the block couplings of the state
grid, by implicit time stepping with policy (Howard) iteration: freeze
the variance policy beta, take one linear implicit step with drift
-beta/2, diffusion beta and source -F(beta), recompute beta from the
discrete derivatives, repeat.  The frozen-policy step is one tridiagonal
solve over all blocks at once; couplings between blocks are resolved
exactly with a unit-influence column and a scalar recurrence through
the blocks.

Couplings at a block's start node:

  barrier sheets   Dirichlet copy: the unhit sheet equals the next
                   sheet at the barrier node (crossing identity, exact);
  lookback rows    zero normal derivative in y at the diagonal x = y,
                   realized as a second-order one-sided Neumann copy
                   from the two rows below (the first-order copy biases
                   prices at O(dx) with a large constant).  Rows whose
                   copy stencil would reach across a barrier level,
                   where the solution genuinely jumps in y, use the
                   min-update stencil instead: the diagonal node solves
                   the PDE row with its left neighbour taken from the
                   row below's own diagonal, which is monotone and
                   exact for solutions that are constant in y within
                   each barrier region.

The assembled stencil (central first and second differences inside,
linear continuation at the far field) is shared verbatim with the
linear solver so that gradients of the discrete objective computed by
the linear solver are exact.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_banded

from . import instruments as ins
from . import statespace as ss
from .cost import CostSpec, beta_star_array, penalty_raw
from .errors import ContractViolationError, SolverError

DEFAULT_MAX_POLICY_ITERS = 50


# ----------------------------------------------------------------------
# shared stencil machinery (reused by linpde)
# ----------------------------------------------------------------------

# coupling codes for the start node of block b >= 1
COPY = 1      # first-order Dirichlet copy from the previous block
STITCH = 2    # min-update PDE row, left neighbour on the previous block
COPY2 = 3     # second-order one-sided Neumann copy from two blocks below


@functools.lru_cache(maxsize=64)
def _stencil(grid: ss.StateGrid):
    """Node classification and coupling layout for one grid, cached."""
    nb, nx = grid.n_blocks, grid.spot.n_x
    starts = grid.block_starts
    idx = np.arange(nx)

    padding = idx[None, :] < starts[:, None]
    coupling = idx[None, :] == starts[:, None]
    coupling[0, :] = False                      # block 0 has no coupling
    left_ff = np.zeros((nb, nx), dtype=bool)
    left_ff[0, 0] = True
    right_ff = np.zeros((nb, nx), dtype=bool)
    right_ff[:, -1] = True

    codes = np.zeros(nb, dtype=int)
    if grid.kind.kind == ins.BARRIER:
        # sheet crossing identity is an exact Dirichlet copy
        codes[1:] = COPY
    elif grid.kind.kind == ins.LOOKBACK:
        # second-order Neumann copy along y, except where the copy would
        # reach across a barrier level (the solution jumps in y there);
        # those rows use the min-update stencil, which is exact for
        # region-wise constant data
        codes[1:] = COPY2
        codes[1] = STITCH
        for ib in grid.level_indices:
            for j in (ib + 1, ib + 2):
                if 1 <= j < nb:
                    codes[j] = STITCH

    stitch_rows = coupling & (codes == STITCH)[:, None]
    interior = ~(padding | coupling | left_ff | right_ff)

    return dict(padding=padding, coupling=coupling, left_ff=left_ff,
                right_ff=right_ff, interior=interior, codes=codes,
                stitch_rows=stitch_rows, rows=np.arange(1, nb),
                cols=starts[1:])


@dataclass(eq=False)
class StepOperator:
    """One assembled implicit step: banded matrix plus coupling data."""

    ab: np.ndarray              # (3, n_blocks*n_x) banded matrix
    unit_col: np.ndarray        # (n_blocks, n_x) load of the influence column
    rhs_zero: np.ndarray        # rows whose physical rhs is forced to zero
    grid: ss.StateGrid
    lff_blend: float = 0.0      # explicit transport weight at the left edge


def assemble_step(grid: ss.StateGrid, alpha, beta, dt: float) -> StepOperator:
    """Banded matrix of the implicit step I - dt*(alpha d_x + (beta/2) d_xx).

    Interior rows use central differences (for the martingale drift
    -beta/2 the cell Peclet number is dx/2, so the matrix stays an
    M-matrix on any reasonable grid); far-field rows drop the second
    derivative and take a one-sided first difference (linear
    continuation), implicitly where that is upwind and as an explicit
    convex blend of the previous-level data otherwise; coupling rows
    are identities (copy) or one-sided PDE rows with the foreign
    neighbour moved to the right-hand side (min-update).
    """
    st = _stencil(grid)
    nb, nx = grid.n_blocks, grid.spot.n_x
    dx = grid.spot.dx
    a = np.broadcast_to(np.asarray(alpha, dtype=float), (nb, nx))
    b = np.broadcast_to(np.asarray(beta, dtype=float), (nb, nx))

    diff = b / (2.0 * dx * dx)
    adv = a / (2.0 * dx)

    diag = np.ones((nb, nx))
    sub = np.zeros((nb, nx))
    sup = np.zeros((nb, nx))
    unit_col = np.zeros((nb, nx))

    itr = st["interior"]
    diag[itr] = 1.0 + dt * 2.0 * diff[itr]
    sup[itr] = -dt * (diff[itr] + adv[itr])
    sub[itr] = -dt * (diff[itr] - adv[itr])

    # left far field: for inward drift (a >= 0) the one-sided implicit
    # row is upwind and monotone; for outward drift it is not, so the
    # transport is taken explicitly as a convex blend of the data at
    # the edge and its neighbour (monotone for dt|a| <= dx)
    lff_blend = 0.0
    a00 = float(a[0, 0])
    if a00 >= 0.0:
        diag[0, 0] = 1.0 + dt * a00 / dx
        sup[0, 0] = -dt * a00 / dx
    else:
        lff_blend = -dt * a00 / dx

    rff = st["right_ff"]
    diag[rff] = 1.0 - dt * a[rff] / dx
    sub[rff] = dt * a[rff] / dx

    cpl = st["coupling"]
    sti = st["stitch_rows"]
    diag[sti] = 1.0 + dt * 2.0 * diff[sti]
    sup[sti] = -dt * (diff[sti] + adv[sti])
    unit_col[sti] = dt * (diff[sti] - adv[sti])
    copy_rows = cpl & ~sti
    unit_col[copy_rows] = 1.0

    n = nb * nx
    ab = np.zeros((3, n))
    ab[1] = diag.reshape(-1)
    ab[0, 1:] = sup.reshape(-1)[:-1]
    ab[2, :-1] = sub.reshape(-1)[1:]

    rhs_zero = st["padding"] | copy_rows
    return StepOperator(ab=ab, unit_col=unit_col, rhs_zero=rhs_zero,
                        grid=grid, lff_blend=lff_blend)


def step_implicit(op: StepOperator, rhs_cols: np.ndarray) -> np.ndarray:
    """One implicit step for any number of right-hand sides.

    rhs_cols has shape (n_blocks, n_x, k).  The inter-block coupling
    (each block reads the previous one at the new time level) is
    resolved exactly: solve once with the physical right-hand sides and
    once with the coupling loads, then propagate the coupling values
    through the blocks by a scalar recurrence and recombine.
    """
    grid = op.grid
    st = _stencil(grid)
    nb, nx, k = rhs_cols.shape
    n = nb * nx

    big = np.empty((nb, nx, k + 1))
    big[:, :, :k] = rhs_cols
    big[op.rhs_zero, :k] = 0.0
    big[:, :, k] = op.unit_col
    if op.lff_blend > 0.0:
        c = op.lff_blend
        big[0, 0, :k] = (1.0 - c) * rhs_cols[0, 0] + c * rhs_cols[0, 1]
    sol = solve_banded((1, 1), op.ab, big.reshape(n, k + 1),
                       overwrite_ab=False, overwrite_b=True,
                       check_finite=False)
    sol = sol.reshape(nb, nx, k + 1)
    u0 = sol[:, :, :k]
    w = sol[:, :, k]

    # resolved(q)[c] = u0[q, c] + bvals[q] * w[q, c]; the coupling value
    # of block b is a fixed combination of resolved lower-block entries
    bvals = np.zeros((nb, k))
    codes, starts = st["codes"], grid.block_starts
    for b in range(1, nb):
        s = starts[b]
        if codes[b] == STITCH:
            c = s - 1
            bvals[b] = u0[b - 1, c, :] + bvals[b - 1] * w[b - 1, c]
        elif codes[b] == COPY2:
            v1 = u0[b - 1, s, :] + bvals[b - 1] * w[b - 1, s]
            v2 = u0[b - 2, s, :] + bvals[b - 2] * w[b - 2, s]
            bvals[b] = (4.0 * v1 - v2) / 3.0
        else:  # COPY
            bvals[b] = u0[b - 1, s, :] + bvals[b - 1] * w[b - 1, s]
    return u0 + bvals[:, None, :] * w[:, :, None]


def compute_z(grid: ss.StateGrid, u: np.ndarray) -> np.ndarray:
    """Conjugate argument z = (d_xx u - d_x u)/2 from discrete differences.

    Matches the assembled stencil: central differences at interior
    nodes (including min-update diagonal nodes, whose left neighbour
    lives on the row below), one-sided first difference with zero
    curvature at Dirichlet nodes and the far field.
    """
    dx = grid.spot.dx
    st = _stencil(grid)
    z = np.zeros_like(u)
    z[:, 1:-1] = ((u[:, 2:] - 2.0 * u[:, 1:-1] + u[:, :-2]) / (dx * dx)
                  - (u[:, 2:] - u[:, :-2]) / (2.0 * dx)) / 2.0
    z[:, -1] = -(u[:, -1] - u[:, -2]) / (2.0 * dx)
    z[:, 0] = -(u[:, 1] - u[:, 0]) / (2.0 * dx)
    rows, cols = st["rows"], st["cols"]
    onesided = ~st["stitch_rows"][rows, cols]
    r, c = rows[onesided], cols[onesided]
    z[r, c] = -(u[r, c + 1] - u[r, c]) / (2.0 * dx)
    r, c = rows[~onesided], cols[~onesided]
    if len(r):
        u_l = u[r - 1, c - 1]
        z[r, c] = ((u[r, c + 1] - 2.0 * u[r, c] + u_l) / (dx * dx)
                   - (u[r, c + 1] - u_l) / (2.0 * dx)) / 2.0
    z[st["padding"]] = 0.0
    return z


def interior_mask(grid: ss.StateGrid) -> np.ndarray:
    return _stencil(grid)["interior"]


def build_jumps(grid: ss.StateGrid, insts: Sequence[ins.Instrument],
                lam: Optional[np.ndarray] = None) -> dict:
    """Map knot index -> aggregated payoff stack at that maturity."""
    out: dict[int, np.ndarray] = {}
    for i, inst in enumerate(insts):
        k = grid.time.maturity_index[inst.maturity]
        stack = ss.jump_stack(grid, inst)
        if lam is not None:
            stack = lam[i] * stack
        if k in out:
            out[k] = out[k] + stack
        else:
            out[k] = stack
    return out


# ----------------------------------------------------------------------
# dual solve
# ----------------------------------------------------------------------

@dataclass(eq=False)
class DualSolution:
    """Converged dual surfaces and the induced variance policy.

    phi lives on time knots (values at a maturity include that
    maturity's jump, i.e. they are the data seen by the next backward
    step); beta lives on time steps and applies on [t_k, t_{k+1}).
    The optimal drift is -beta/2 throughout.
    """

    phi: ss.Surface
    beta: ss.Surface
    policy_iters: list
    residuals: list            # per-step max |policy change|
    step_residuals: list       # per-step max discrete PDE residual

    @property
    def grid(self) -> ss.StateGrid:
        return self.phi.grid

    def alpha_values(self) -> np.ndarray:
        return -0.5 * self.beta.values

    def value_at_start(self) -> float:
        return self.phi.at_initial_node(0)


def solve_dual(cost_spec: CostSpec, insts: Sequence[ins.Instrument],
               lam, grid: ss.StateGrid,
               tol_policy: Optional[float] = None,
               max_policy_iters: int = DEFAULT_MAX_POLICY_ITERS,
               beta_warm: Optional[np.ndarray] = None,
               extra_jumps: Optional[dict] = None) -> DualSolution:
    """Backward sweep of the nonlinear dual PDE.

    Terminal data is zero at the horizon; at each maturity knot the
    surface jumps by -lam_i * payoff_i on the blocks where instrument i
    pays.  extra_jumps maps a maturity time to a stack added to the
    surface at that knot (synthetic terminal perturbations).  beta_warm
    (per-step policy fields from an earlier solve on the same grid)
    only seeds the policy iteration; the converged result is
    init-independent within tol_policy.  Raises SolverError on
    policy-iteration failure or NaNs.
    """
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (len(insts),):
        raise ContractViolationError(
            f"lambda must have one entry per instrument "
            f"(got {lam.shape}, need ({len(insts)},))")
    if tol_policy is None:
        tol_policy = 1e-8 * cost_spec.v_bar

    nb, nx = grid.n_blocks, grid.spot.n_x
    knots = grid.time.knots
    n_t = grid.time.n_t
    jumps = build_jumps(grid, insts, lam)
    if extra_jumps:
        for t, stack in extra_jumps.items():
            if t not in grid.time.maturity_index:
                raise ContractViolationError(
                    f"extra jump time {t} is not a grid maturity")
            k = grid.time.maturity_index[t]
            jumps[k] = jumps.get(k, 0.0) - np.asarray(stack, dtype=float)

    phi = np.zeros((n_t + 1, nb, nx))
    beta_steps = np.empty((n_t, nb, nx))
    policy_iters, residuals, step_residuals = [], [], []

    if n_t in jumps:
        phi[n_t] -= jumps[n_t]
    ss.fill_extension(grid, phi[n_t])

    itr = interior_mask(grid)
    beta = np.full((nb, nx), cost_spec.v_bar)
    for n in range(n_t - 1, -1, -1):
        dt = float(knots[n + 1] - knots[n])
        phi_next = phi[n + 1]
        if beta_warm is not None:
            beta = beta_warm[n].copy()
        iters = 0
        while True:
            rhs = (phi_next - dt * penalty_raw(cost_spec, beta))[:, :, None]
            op = assemble_step(grid, -0.5 * beta, beta, dt)
            u = step_implicit(op, rhs)[:, :, 0]
            if not np.all(np.isfinite(u)):
                raise SolverError(f"NaN detected in backward step {n}")
            z = compute_z(grid, u)
            beta_new = beta_star_array(cost_spec, z, beta0=beta)
            resid = float(np.max(np.abs(beta_new - beta)))
            iters += 1
            beta = beta_new
            if resid < tol_policy or iters >= max_policy_iters:
                break
        if resid >= tol_policy:
            raise SolverError(
                f"policy iteration failed to converge at step {n}",
                residual=resid)
        # discrete optimality residual with the stored (recomputed) policy
        res = (phi_next - u) / dt + beta * z - penalty_raw(cost_spec, beta)
        step_residuals.append(float(np.max(np.abs(res[itr]))))
        policy_iters.append(iters)
        residuals.append(resid)

        phi[n] = u
        if n in jumps:
            phi[n] -= jumps[n]
        ss.fill_extension(grid, phi[n])
        beta_steps[n] = beta
        ss.fill_extension(grid, beta_steps[n])

    policy_iters.reverse()
    residuals.reverse()
    step_residuals.reverse()

    phi_surface = ss.Surface("phi", knots.copy(), phi, grid)
    beta_surface = ss.Surface("beta", knots[:-1].copy(), beta_steps, grid)
    return DualSolution(phi=phi_surface, beta=beta_surface,
                        policy_iters=policy_iters, residuals=residuals,
                        step_residuals=step_residuals)


def extract_vol(solution: DualSolution) -> ss.Surface:
    """Volatility surface sigma = sqrt(beta), per sqrt(year)."""
    sigma = np.sqrt(solution.beta.values)
    return ss.Surface("sigma", solution.beta.times.copy(), sigma,
                      solution.grid)
