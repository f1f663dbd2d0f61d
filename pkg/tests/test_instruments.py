"""Payoff catalog, state selection and parity conversions."""

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voltran import instruments as ins
from voltran.errors import (ConfigurationError, ContractViolationError,
                            UnsupportedFeatureError)

from conftest import make_instrument


class TestRequiredState:
    def test_single_put_is_euro(self):
        kind = ins.required_state([make_instrument("a", ins.EUROPEAN_PUT, 1.0, 0.5)])
        assert kind.kind == ins.EURO
        assert kind.levels == ()

    def test_nested_barriers(self):
        insts = [
            make_instrument("a", ins.EUROPEAN_PUT, 1.0, 0.5),
            make_instrument("b", ins.BARRIER_DOWN_OUT_PUT, 1.0, 0.5, barrier=0.8),
            make_instrument("c", ins.BARRIER_DOWN_IN_PUT, 1.0, 0.5, barrier=0.9),
        ]
        kind = ins.required_state(insts)
        assert kind.kind == ins.BARRIER
        assert kind.levels == (math.log(0.8), math.log(0.9))

    def test_lookback_subsumes_barriers(self):
        insts = [
            make_instrument("a", ins.EUROPEAN_PUT, 1.0, 0.5),
            make_instrument("b", ins.BARRIER_DOWN_OUT_PUT, 1.0, 0.5, barrier=0.8),
            make_instrument("c", ins.LOOKBACK_FIXED_STRIKE_PUT, 1.0, 1.0),
        ]
        kind = ins.required_state(insts)
        assert kind.kind == ins.LOOKBACK
        assert kind.levels == (math.log(0.8),)

    def test_empty_list_rejected(self):
        with pytest.raises(ConfigurationError):
            ins.required_state([])

    def test_upper_barrier_unsupported(self):
        bad = make_instrument("u", ins.BARRIER_DOWN_OUT_PUT, 1.0, 0.5, barrier=1.2)
        with pytest.raises(UnsupportedFeatureError):
            ins.required_state([bad])


class TestPayoff:
    def test_knocked_out(self):
        do = make_instrument("d", ins.BARRIER_DOWN_OUT_PUT, 1.0, 0.5, barrier=0.8)
        assert ins.payoff(do, math.log(0.9), hit=True) == 0.0
        assert ins.payoff(do, math.log(0.9), hit=False) == pytest.approx(0.1)

    def test_atm_put_zero(self):
        put = make_instrument("p", ins.EUROPEAN_PUT, 1.0, 0.5)
        assert ins.payoff(put, 0.0) == 0.0

    def test_lookback_value(self):
        lb = make_instrument("l", ins.LOOKBACK_FIXED_STRIKE_PUT, 1.0, 0.5)
        assert ins.payoff(lb, 0.0, y=math.log(0.85)) == pytest.approx(0.15)

    def test_barrier_hit_derived_from_minimum(self):
        di = make_instrument("d", ins.BARRIER_DOWN_IN_PUT, 1.0, 0.5, barrier=0.8)
        x = math.log(0.9)
        assert ins.payoff(di, x, y=math.log(0.79)) == pytest.approx(0.1)
        assert ins.payoff(di, x, y=math.log(0.81)) == 0.0

    def test_missing_state_is_contract_violation(self):
        lb = make_instrument("l", ins.LOOKBACK_FIXED_STRIKE_PUT, 1.0, 0.5)
        with pytest.raises(ContractViolationError):
            ins.payoff(lb, 0.0)
        do = make_instrument("d", ins.BARRIER_DOWN_OUT_PUT, 1.0, 0.5, barrier=0.8)
        with pytest.raises(ContractViolationError):
            ins.payoff(do, 0.0)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0.5, 1.5), st.floats(0.5, 1.3), st.floats(-0.6, 0.3),
           st.floats(-0.9, 0.0))
    def test_in_out_parity_pointwise(self, strike, barrier_frac, x, ymin):
        barrier = 0.95 * barrier_frac
        y = min(ymin, x)
        di = make_instrument("i", ins.BARRIER_DOWN_IN_PUT, strike, 0.5,
                             barrier=barrier)
        do = make_instrument("o", ins.BARRIER_DOWN_OUT_PUT, strike, 0.5,
                             barrier=barrier)
        eu = make_instrument("e", ins.EUROPEAN_PUT, strike, 0.5)
        total = ins.payoff(di, x, y=y) + ins.payoff(do, x, y=y)
        assert total == pytest.approx(ins.payoff(eu, x), abs=1e-14)

    def test_bounded_by_strike(self):
        for kind in (ins.EUROPEAN_PUT, ins.LOOKBACK_FIXED_STRIKE_PUT):
            inst = make_instrument("b", kind, 1.2, 0.5)
            for x in (-3.0, -1.0, 0.0, 1.0):
                p = ins.payoff(inst, x, y=min(x, -3.0))
                assert 0.0 <= p <= 1.2


class TestJumpTimes:
    def test_dedup_and_sort(self):
        insts = [make_instrument("a", ins.EUROPEAN_PUT, 1.0, 0.5),
                 make_instrument("b", ins.EUROPEAN_PUT, 1.1, 0.25),
                 make_instrument("c", ins.EUROPEAN_PUT, 0.9, 0.5)]
        assert ins.jump_times(insts) == [0.25, 0.5]

    def test_single(self):
        assert ins.jump_times([make_instrument("a", ins.EUROPEAN_PUT, 1.0, 1.0)]) == [1.0]

    def test_four_maturities(self):
        ts = [0.25, 0.5, 0.75, 1.0]
        insts = [make_instrument(f"a{t}", ins.EUROPEAN_PUT, 1.0, t) for t in ts]
        assert ins.jump_times(insts) == ts


class TestCallConversion:
    def test_parity_adjustment(self):
        call = make_instrument("c", ins.EUROPEAN_CALL, 0.9, 0.5, target=0.15)
        converted, was_call = ins.convert_calls_to_puts([call], spot=1.0)
        assert was_call == [True]
        assert converted[0].kind == ins.EUROPEAN_PUT
        assert converted[0].target_price == pytest.approx(0.15 - (1.0 - 0.9))

    def test_put_untouched(self):
        put = make_instrument("p", ins.EUROPEAN_PUT, 0.9, 0.5, target=0.05)
        converted, was_call = ins.convert_calls_to_puts([put], spot=1.0)
        assert was_call == [False]
        assert converted[0] is put


class TestValidation:
    def test_target_bounds(self):
        good = make_instrument("g", ins.EUROPEAN_PUT, 1.0, 0.5, target=0.5)
        ins.check_target_bounds([good], spot=1.0)
        bad = make_instrument("b", ins.EUROPEAN_PUT, 1.0, 0.5, target=1.5)
        with pytest.raises(ConfigurationError, match="arbitrage"):
            ins.check_target_bounds([bad], spot=1.0)

    def test_field_errors_name_field(self):
        with pytest.raises(ConfigurationError, match="strike"):
            ins.validate_instrument(
                make_instrument("s", ins.EUROPEAN_PUT, -1.0, 0.5), 1.0)
        with pytest.raises(ConfigurationError, match="maturity"):
            ins.validate_instrument(
                make_instrument("m", ins.EUROPEAN_PUT, 1.0, 1.5), 1.0)
        with pytest.raises(ConfigurationError, match="barrier"):
            ins.validate_instrument(
                make_instrument("b", ins.BARRIER_DOWN_OUT_PUT, 1.0, 0.5), 1.0)
