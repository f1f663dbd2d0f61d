"""Grid construction, block layout, boundary operators, CSV schema."""

import math

import numpy as np
import pytest

import voltran as vt
from voltran import instruments as ins
from voltran import statespace as ss
from voltran import hjb, linpde
from voltran.errors import ConfigurationError, ContractViolationError

from conftest import make_instrument, mixed_instruments


class TestBuildGrid:
    def test_euro_margin_arithmetic(self):
        insts = [make_instrument("a", ins.EUROPEAN_PUT, 0.8, 1.0),
                 make_instrument("b", ins.EUROPEAN_PUT, 1.2, 1.0)]
        grid = ss.build_grid(ss.GridConfig(n_x=201, n_t=50), insts,
                             spot=1.0, sigma_bar=0.2)
        assert grid.spot.x_min < math.log(0.8) - 0.8
        assert grid.spot.x_max > math.log(1.2) + 0.8
        assert grid.kind.kind == ins.EURO
        assert grid.n_blocks == 1

    def test_spot_exactly_on_node(self):
        insts = [make_instrument("a", ins.EUROPEAN_PUT, 1.07, 0.7)]
        grid = ss.build_grid(ss.GridConfig(n_x=121, n_t=40), insts,
                             spot=1.23, sigma_bar=0.25)
        assert grid.spot.nodes[grid.spot.ix0] == math.log(1.23)

    def test_two_nested_barriers_give_three_sheets(self):
        insts = [make_instrument("a", ins.BARRIER_DOWN_OUT_PUT, 1.0, 0.5, barrier=0.8),
                 make_instrument("b", ins.BARRIER_DOWN_IN_PUT, 1.0, 0.5, barrier=0.9)]
        grid = ss.build_grid(ss.GridConfig(n_x=201, n_t=50), insts,
                             spot=1.0, sigma_bar=0.2)
        assert grid.kind.kind == ins.BARRIER
        assert grid.n_blocks == 3
        # block 0 (all hit) spans the whole range; later blocks start at
        # the snapped barrier nodes in ascending order
        assert grid.block_starts[0] == 0
        assert list(grid.block_starts) == sorted(grid.block_starts)
        for lev, idx in zip(grid.kind.levels, grid.level_indices):
            assert abs(grid.spot.nodes[idx] - lev) <= grid.spot.dx / 2

    def test_lookback_triangle(self):
        insts = [make_instrument("a", ins.LOOKBACK_FIXED_STRIKE_PUT, 1.0, 1.0)]
        grid = ss.build_grid(ss.GridConfig(n_x=151, n_t=40), insts,
                             spot=1.0, sigma_bar=0.2)
        assert grid.kind.kind == ins.LOOKBACK
        assert grid.n_blocks == grid.spot.ix0 + 1
        # row j starts at x-index j: strictly shrinking row lengths in y
        assert np.array_equal(grid.block_starts, np.arange(grid.n_blocks))
        assert grid.block_labels[-1] == grid.spot.nodes[grid.spot.ix0]

    def test_maturities_are_knots(self):
        insts = [make_instrument("a", ins.EUROPEAN_PUT, 1.0, t)
                 for t in (0.25, 0.5, 0.75, 1.0)]
        grid = ss.build_grid(ss.GridConfig(n_x=101, n_t=30), insts,
                             spot=1.0, sigma_bar=0.2)
        for t in (0.25, 0.5, 0.75, 1.0):
            assert grid.time.knots[grid.time.maturity_index[t]] == t

    def test_dt_max_respected(self):
        insts = [make_instrument("a", ins.EUROPEAN_PUT, 1.0, 1.0)]
        grid = ss.build_grid(ss.GridConfig(n_x=101, n_t=20, dt_max=0.01),
                             insts, spot=1.0, sigma_bar=0.2)
        assert np.max(grid.time.steps()) <= 0.01 + 1e-15

    def test_grid_size_floor(self):
        insts = [make_instrument("a", ins.EUROPEAN_PUT, 1.0, 1.0)]
        with pytest.raises(ConfigurationError):
            ss.build_grid(ss.GridConfig(n_x=31, n_t=50), insts, 1.0, 0.2)
        with pytest.raises(ConfigurationError):
            ss.build_grid(ss.GridConfig(n_x=101, n_t=10), insts, 1.0, 0.2)

    def test_forced_state_upgrade_and_downgrade(self):
        eu = [make_instrument("a", ins.EUROPEAN_PUT, 1.0, 1.0)]
        grid = ss.build_grid(ss.GridConfig(n_x=101, n_t=30,
                                           force_state="lookback"),
                             eu, spot=1.0, sigma_bar=0.2)
        assert grid.kind.kind == ins.LOOKBACK
        lb = [make_instrument("a", ins.LOOKBACK_FIXED_STRIKE_PUT, 1.0, 1.0)]
        with pytest.raises(ConfigurationError):
            ss.build_grid(ss.GridConfig(n_x=101, n_t=30, force_state="euro"),
                          lb, spot=1.0, sigma_bar=0.2)

    def test_snap_report(self):
        insts = [make_instrument("a", ins.BARRIER_DOWN_OUT_PUT, 1.0, 0.5,
                                 barrier=0.83)]
        grid = ss.build_grid(ss.GridConfig(n_x=101, n_t=30), insts,
                             spot=1.0, sigma_bar=0.2)
        assert grid.snap_report["x0"] == 0.0
        lev_keys = [k for k in grid.snap_report if k.startswith("level_")]
        assert len(lev_keys) == 1
        assert abs(grid.snap_report[lev_keys[0]]) <= grid.spot.dx / 2


class TestBoundaryOperators:
    def _lookback_grid(self):
        insts = [make_instrument("a", ins.LOOKBACK_FIXED_STRIKE_PUT, 1.0, 1.0)]
        return ss.build_grid(ss.GridConfig(n_x=101, n_t=30), insts,
                             spot=1.0, sigma_bar=0.2)

    def test_lookback_boundary_constant_unchanged(self):
        grid = self._lookback_grid()
        slice2d = np.ones((grid.n_blocks, grid.spot.n_x)) * 3.7
        out = ss.apply_lookback_boundary(grid, slice2d)
        assert np.array_equal(out, slice2d)

    def test_lookback_boundary_kills_linear_slope(self):
        grid = self._lookback_grid()
        y = grid.block_labels[:, None]
        slice2d = 2.5 * np.broadcast_to(y, (grid.n_blocks, grid.spot.n_x)).copy()
        out = ss.apply_lookback_boundary(grid, slice2d)
        for b in range(1, grid.n_blocks):
            s = grid.block_starts[b]
            assert out[b, s] - out[b - 1, s] == 0.0
        # interior untouched
        assert out[5, 50] == slice2d[5, 50]

    def test_lookback_boundary_wrong_grid(self, euro_grid):
        with pytest.raises(ContractViolationError):
            ss.apply_lookback_boundary(
                euro_grid, np.zeros((1, euro_grid.spot.n_x)))

    def test_sheet_coupling_identical_sheets(self):
        insts = [make_instrument("a", ins.BARRIER_DOWN_OUT_PUT, 1.0, 0.5,
                                 barrier=0.85)]
        grid = ss.build_grid(ss.GridConfig(n_x=101, n_t=30), insts,
                             spot=1.0, sigma_bar=0.2)
        payoff = np.maximum(1.0 - np.exp(grid.spot.nodes), 0.0)
        sheets = np.tile(payoff, (grid.n_blocks, 1))
        out = ss.couple_barrier_sheets(grid, sheets)
        assert np.array_equal(out, sheets)

    def test_sheet_coupling_dirichlet_value(self):
        insts = [make_instrument("a", ins.BARRIER_DOWN_OUT_PUT, 1.0, 0.5,
                                 barrier=0.85)]
        grid = ss.build_grid(ss.GridConfig(n_x=101, n_t=30), insts,
                             spot=1.0, sigma_bar=0.2)
        sheets = np.vstack([np.full(grid.spot.n_x, 2.0),
                            np.full(grid.spot.n_x, 5.0)])
        out = ss.couple_barrier_sheets(grid, sheets)
        s = grid.block_starts[1]
        assert out[1, s] == 2.0
        assert out[1, s + 1] == 5.0


class TestSurface:
    def test_csv_schema(self, tmp_path, euro_grid):
        nt = euro_grid.time.n_t
        surf = ss.Surface("phi", euro_grid.time.knots,
                          np.random.default_rng(0).random(
                              (nt + 1, 1, euro_grid.spot.n_x)), euro_grid)
        path = tmp_path / "phi.csv"
        surf.write_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "t,sheet_or_y,x,value"
        assert len(lines) == 1 + (nt + 1) * euro_grid.spot.n_x
        first = lines[1].split(",")
        assert len(first) == 4
        assert float(first[0]) == 0.0
        # t-major ordering and 17 significant digits round-trip
        v = float(first[3])
        assert f"{v:.17g}" == first[3]

    def test_csv_extended_column(self, tmp_path):
        insts = [make_instrument("a", ins.BARRIER_DOWN_OUT_PUT, 1.0, 0.25,
                                 barrier=0.85)]
        grid = ss.build_grid(ss.GridConfig(n_x=51, n_t=20), insts,
                             spot=1.0, sigma_bar=0.2)
        values = np.ones((grid.time.n_t, grid.n_blocks, grid.spot.n_x))
        surf = ss.Surface("sigma", grid.time.knots[:-1], values, grid)
        path = tmp_path / "sigma.csv"
        surf.write_csv(path, extended_col=True)
        lines = path.read_text().splitlines()
        assert lines[0] == "t,sheet_or_y,x,value,extended"
        flags = {line.split(",")[4] for line in lines[1:]}
        assert flags == {"0", "1"}

    def test_fill_extension_matches_cascade(self):
        insts = mixed_instruments()
        grid = ss.build_grid(ss.GridConfig(n_x=101, n_t=30), insts,
                             spot=1.0, sigma_bar=0.2)
        rng = np.random.default_rng(3)
        stack = rng.random((grid.n_blocks, grid.spot.n_x))
        expected = stack.copy()
        for b in range(1, grid.n_blocks):
            s = grid.block_starts[b]
            expected[b, :s] = expected[b - 1, :s]
        ss.fill_extension(grid, stack)
        assert np.array_equal(stack, expected)


class TestRefinementOrder:
    def test_refinement_ratio_in_band(self, cost_spec):
        # successive differences of phi(0, X0) under grid doubling stay
        # within the first-to-second order band
        put = make_instrument("a", ins.EUROPEAN_PUT, 1.0, 1.0)
        values = []
        for nx, nt in ((101, 50), (201, 100), (401, 200)):
            grid = ss.build_grid(ss.GridConfig(n_x=nx, n_t=nt), [put],
                                 spot=1.0, sigma_bar=0.2)
            sol = hjb.solve_dual(cost_spec, [put], [0.5], grid)
            values.append(sol.value_at_start())
        e1 = abs(values[1] - values[0])
        e2 = abs(values[2] - values[1])
        assert 1.5 <= e1 / e2 <= 4.0
