"""Discrete reduced state space: time x log-spot x auxiliary state.

All PDEs run on a uniform log-spot grid shared by a stack of "blocks".
A block is one sheet of the solution:

  euro      one block covering the whole x-range;
  barrier   l+1 blocks for l nested lower barriers, block b meaning
            "the top l-b barriers are still unhit"; block 0 (all hit)
            covers the whole range, block b starts at the (b-1)-th
            barrier node;
  lookback  one block per running-minimum level y_j, block j covering
            x >= y_j (triangular domain).

In every case block b >= 1 is coupled to block b-1 by a Dirichlet copy
at its start node, which realizes the barrier-crossing identity for
sheets and the zero normal derivative at the diagonal for lookbacks.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import instruments as ins
from .errors import ConfigurationError, ContractViolationError


@dataclass(frozen=True)
class GridConfig:
    n_x: int = 201
    n_t: int = 100
    x_margin_sigmas: float = 4.0
    dt_max: Optional[float] = None
    force_state: Optional[str] = None


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Knots from 0 to the horizon; every instrument maturity is a knot."""

    knots: np.ndarray
    maturity_index: dict

    @property
    def n_t(self) -> int:
        return len(self.knots) - 1

    @property
    def horizon(self) -> float:
        return float(self.knots[-1])

    def steps(self) -> np.ndarray:
        return np.diff(self.knots)


@dataclass(frozen=True, eq=False)
class SpotGrid:
    """Uniform log-spot nodes with the initial point exactly on a node."""

    nodes: np.ndarray
    ix0: int

    @property
    def n_x(self) -> int:
        return len(self.nodes)

    @property
    def dx(self) -> float:
        return float(self.nodes[1] - self.nodes[0])

    @property
    def x_min(self) -> float:
        return float(self.nodes[0])

    @property
    def x_max(self) -> float:
        return float(self.nodes[-1])

    @property
    def x0(self) -> float:
        return float(self.nodes[self.ix0])


@dataclass(frozen=True, eq=False)
class StateGrid:
    """Time grid, spot grid and the block (sheet/row) layout."""

    kind: ins.StateSpaceKind
    time: TimeGrid
    spot: SpotGrid
    block_starts: np.ndarray        # ascending start x-index per block
    block_labels: np.ndarray        # hit count for barrier, y value for lookback
    level_indices: np.ndarray       # x-index of each snapped barrier level
    snap_report: dict = field(default_factory=dict)

    @property
    def n_blocks(self) -> int:
        return len(self.block_starts)

    @property
    def initial_block(self) -> int:
        if self.kind.kind == ins.LOOKBACK:
            return self.n_blocks - 1
        if self.kind.kind == ins.BARRIER:
            return self.n_blocks - 1
        return 0

    def levels(self) -> np.ndarray:
        """Snapped log-barrier levels, ascending."""
        return self.spot.nodes[self.level_indices]

    def defined_mask(self) -> np.ndarray:
        """(n_blocks, n_x) boolean: True where a node belongs to its block."""
        idx = np.arange(self.spot.n_x)
        return idx[None, :] >= self.block_starts[:, None]


@dataclass
class Surface:
    """Values indexed by (time knot, block, x node); finite everywhere.

    Nodes outside a block's domain carry the extension value copied from
    the block below (the sheet one more barrier hit, or the diagonal
    value for lookbacks) and are flagged by the grid's defined mask.
    """

    name: str
    times: np.ndarray
    values: np.ndarray              # (n_times, n_blocks, n_x)
    grid: StateGrid

    def at_initial_node(self, time_index: int = 0) -> float:
        g = self.grid
        return float(self.values[time_index, g.initial_block, g.spot.ix0])

    def write_csv(self, path, extended_col: bool = False) -> None:
        """Rows "t,sheet_or_y,x,value[,extended]", t outer, 17 sig digits."""
        g = self.grid
        defined = g.defined_mask()
        with open(path, "w", encoding="utf-8") as fh:
            header = "t,sheet_or_y,x,value"
            if extended_col:
                header += ",extended"
            fh.write(header + "\n")
            for it, t in enumerate(self.times):
                for b in range(g.n_blocks):
                    label = g.block_labels[b]
                    for i, x in enumerate(g.spot.nodes):
                        row = (f"{t:.17g},{label:.17g},{x:.17g},"
                               f"{self.values[it, b, i]:.17g}")
                        if extended_col:
                            row += f",{0 if defined[b, i] else 1}"
                        fh.write(row + "\n")


def _build_time_grid(config: GridConfig, maturities: Sequence[float]) -> TimeGrid:
    horizon = max(maturities)
    dt_target = horizon / config.n_t
    knots = [0.0]
    anchors = [0.0] + sorted(maturities)
    for a, b in zip(anchors[:-1], anchors[1:]):
        seg = b - a
        k = max(1, int(math.ceil(seg / dt_target - 1e-12)))
        if config.dt_max is not None:
            k = max(k, int(math.ceil(seg / config.dt_max - 1e-12)))
        knots.extend(np.linspace(a, b, k + 1)[1:].tolist())
    knots = np.asarray(knots)
    maturity_index = {m: int(np.argmin(np.abs(knots - m))) for m in maturities}
    for m, idx in maturity_index.items():
        if knots[idx] != m:
            raise ContractViolationError(f"maturity {m} missed the time grid")
    return TimeGrid(knots=knots, maturity_index=maturity_index)


def _build_spot_grid(config: GridConfig, insts, spot, sigma_bar, horizon):
    x0 = math.log(spot)
    margin = config.x_margin_sigmas * sigma_bar * math.sqrt(horizon)
    lows = [math.log(i.strike) for i in insts]
    highs = [math.log(i.strike) for i in insts]
    lows += [math.log(i.barrier) for i in insts if i.barrier is not None]
    base_lo = min(lows + [x0]) - margin
    base_hi = max(highs + [x0]) + margin
    # leave two spare nodes so anchoring x0 onto the lattice cannot
    # shrink the requested range
    dx = (base_hi - base_lo) / (config.n_x - 3)
    k_lo = int(math.floor((x0 - base_lo) / dx)) + 1
    x_min = x0 - k_lo * dx
    nodes = x_min + dx * np.arange(config.n_x)
    nodes[k_lo] = x0  # exact anchor
    return SpotGrid(nodes=nodes, ix0=k_lo)


def build_grid(config: GridConfig, insts: Sequence[ins.Instrument],
               spot: float, sigma_bar: float,
               kind: Optional[ins.StateSpaceKind] = None) -> StateGrid:
    """Construct the state grid for a set of instruments.

    The state kind defaults to the smallest one supporting every
    instrument; config.force_state (or the kind argument) can request a
    larger one, e.g. solving European products on a lookback grid.
    """
    if config.n_x < 51:
        raise ConfigurationError("n_x must be >= 51")
    if config.n_t < 20:
        raise ConfigurationError("n_t must be >= 20")
    required = ins.required_state(insts, spot)
    if kind is None and config.force_state is not None:
        forced = config.force_state.lower()
        if forced not in (ins.EURO, ins.BARRIER, ins.LOOKBACK):
            raise ConfigurationError(f"unknown force_state '{config.force_state}'")
        kind = ins.StateSpaceKind(forced, required.levels)
    if kind is None:
        kind = required
    order = {ins.EURO: 0, ins.BARRIER: 1, ins.LOOKBACK: 2}
    if order[kind.kind] < order[required.kind]:
        raise ConfigurationError(
            f"state kind '{kind.kind}' cannot support these instruments "
            f"(need at least '{required.kind}')")

    time = _build_time_grid(config, ins.jump_times(insts))
    spotg = _build_spot_grid(config, insts, spot, sigma_bar, time.horizon)

    # snap barrier levels onto nodes and record the distances
    snap_report = {"x0": 0.0}
    level_indices = []
    for lev in kind.levels:
        idx = int(np.argmin(np.abs(spotg.nodes - lev)))
        snap_report[f"level_{lev:.6g}"] = float(spotg.nodes[idx] - lev)
        if idx < 3 or idx >= spotg.ix0:
            raise ConfigurationError(
                f"domain too small: barrier level {lev:.6g} too close to the "
                "grid edge or the spot; widen margins or refine the grid")
        level_indices.append(idx)
    level_indices = np.asarray(sorted(set(level_indices)), dtype=int)
    if len(level_indices) != len(kind.levels):
        raise ConfigurationError(
            "domain too small: distinct barrier levels snapped onto the "
            "same node; refine the grid")

    if kind.kind == ins.EURO:
        starts = np.array([0], dtype=int)
        labels = np.array([0.0])
    elif kind.kind == ins.BARRIER:
        # block b: top (l - b) barriers unhit, defined on x >= level[b-1]
        starts = np.concatenate([[0], level_indices]).astype(int)
        labels = np.arange(len(level_indices), -1, -1, dtype=float)  # hit count
    else:  # lookback: one block per running-minimum node up to x0
        starts = np.arange(spotg.ix0 + 1, dtype=int)
        labels = spotg.nodes[: spotg.ix0 + 1].copy()
    return StateGrid(kind=kind, time=time, spot=spotg,
                     block_starts=starts, block_labels=labels,
                     level_indices=level_indices, snap_report=snap_report)


@functools.lru_cache(maxsize=64)
def _extension_index(grid: StateGrid):
    """(rows, cols, src_rows) of padded nodes and their source blocks.

    The cascade "block b copies block b-1 left of its start" has the
    fixed point: a padded node (b, i) takes the value of the deepest
    block whose domain contains column i.
    """
    nb, nx = grid.n_blocks, grid.spot.n_x
    idx = np.arange(nx)
    pad = idx[None, :] < grid.block_starts[:, None]
    rows, cols = np.nonzero(pad)
    src = np.searchsorted(grid.block_starts, cols, side="right") - 1
    return rows, cols, src


def fill_extension(grid: StateGrid, stack: np.ndarray) -> np.ndarray:
    """Fill nodes left of each block's start from the block below, in place.

    Cascading the copy reproduces, for lookback grids, the diagonal
    value at the same x, and for barrier sheets the next-hit sheet.
    """
    rows, cols, src = _extension_index(grid)
    stack[rows, cols] = stack[src, cols]
    return stack


def apply_lookback_boundary(grid: StateGrid, slice2d: np.ndarray) -> np.ndarray:
    """Zero one-sided normal derivative at the diagonal x = y.

    The diagonal node of each running-minimum row is overwritten with
    the adjacent row's value at the same x (the only in-domain y
    neighbour); interior nodes are untouched.  Returns a new array.
    """
    if grid.kind.kind != ins.LOOKBACK:
        raise ContractViolationError("lookback boundary needs a lookback grid")
    out = np.array(slice2d, dtype=float)
    for b in range(1, grid.n_blocks):
        s = grid.block_starts[b]
        out[b, s] = out[b - 1, s]
    return out


def couple_barrier_sheets(grid: StateGrid, sheets: np.ndarray) -> np.ndarray:
    """Dirichlet coupling at the active barrier of each unhit sheet.

    Sheet values are ordered most-hit first (block 0 = all barriers
    hit); each later block receives the previous block's value at its
    own barrier node.  Returns a new array.
    """
    if grid.kind.kind != ins.BARRIER:
        raise ContractViolationError("sheet coupling needs a barrier grid")
    out = np.array(sheets, dtype=float)
    for b in range(1, grid.n_blocks):
        s = grid.block_starts[b]
        out[b, s] = out[b - 1, s]
    return out


def jump_stack(grid: StateGrid, inst: ins.Instrument) -> np.ndarray:
    """Terminal payoff of one instrument on every block, (n_blocks, n_x).

    Values are evaluated on the full x-range of each block; nodes
    outside a block's domain are later overwritten by the extension
    fill, so their content is irrelevant to the solve.
    """
    x = grid.spot.nodes
    ex = np.exp(x)
    intrinsic_put = np.maximum(inst.strike - ex, 0.0)
    nb = grid.n_blocks
    out = np.zeros((nb, grid.spot.n_x))

    if inst.kind == ins.EUROPEAN_PUT:
        out[:, :] = intrinsic_put[None, :]
        return out
    if inst.kind == ins.LOOKBACK_FIXED_STRIKE_PUT:
        if grid.kind.kind != ins.LOOKBACK:
            raise ContractViolationError("lookback instrument on a non-lookback grid")
        y = grid.block_labels
        out[:, :] = np.maximum(inst.strike - np.exp(y), 0.0)[:, None]
        return out
    if inst.kind in ins.BARRIER_KINDS:
        lev = math.log(inst.barrier)
        idx = int(np.argmin(np.abs(grid.spot.nodes - lev)))
        if grid.kind.kind == ins.BARRIER:
            if idx not in grid.level_indices:
                raise ContractViolationError(
                    f"barrier level of {inst.id} missing from the grid")
            # block b hit-count is l - b; level r is hit iff b <= r
            r = int(np.where(grid.level_indices == idx)[0][0])
            hit = np.arange(nb) <= r
        elif grid.kind.kind == ins.LOOKBACK:
            # running minimum at or below the level means hit
            hit = grid.block_starts <= idx
        else:
            raise ContractViolationError("barrier instrument on a euro grid")
        pays = ~hit if inst.kind == ins.BARRIER_DOWN_OUT_PUT else hit
        out[pays, :] = intrinsic_put[None, :]
        return out
    raise ContractViolationError(f"cannot build jump for kind {inst.kind}")
