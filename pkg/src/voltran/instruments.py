"""Supported payoffs, their target prices, and the state each one needs.

Every product is quoted off the log of the underlying.  Barrier products
use a continuous lower barrier; lookback products use the running
minimum of the log-price, which subsumes lower barriers (the barrier
indicator is a function of the running minimum).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

from .errors import ConfigurationError, ContractViolationError, UnsupportedFeatureError

EUROPEAN_PUT = "european_put"
EUROPEAN_CALL = "european_call"
BARRIER_DOWN_OUT_PUT = "barrier_down_out_put"
BARRIER_DOWN_IN_PUT = "barrier_down_in_put"
LOOKBACK_FIXED_STRIKE_PUT = "lookback_fixed_strike_put"

KINDS = frozenset({EUROPEAN_PUT, EUROPEAN_CALL, BARRIER_DOWN_OUT_PUT,
                   BARRIER_DOWN_IN_PUT, LOOKBACK_FIXED_STRIKE_PUT})
BARRIER_KINDS = frozenset({BARRIER_DOWN_OUT_PUT, BARRIER_DOWN_IN_PUT})

# state-space kinds, ordered by how much of the path they remember
EURO = "euro"
BARRIER = "barrier"
LOOKBACK = "lookback"


@dataclass(frozen=True)
class Instrument:
    """One target payoff: kind, strike, optional barrier, maturity, price."""

    id: str
    kind: str
    strike: float
    maturity: float
    target_price: float
    barrier: Optional[float] = None
    weight: float = 1.0


@dataclass(frozen=True)
class StateSpaceKind:
    """Reduced state required by a set of instruments.

    kind is one of euro/barrier/lookback; levels holds the sorted
    log-barriers (ascending) when barrier products are present.
    """

    kind: str
    levels: tuple = ()


def validate_instrument(inst: Instrument, spot: float) -> None:
    """Field-level checks; raises ConfigurationError naming the field."""
    if inst.kind not in KINDS:
        raise ConfigurationError(f"unknown instrument kind '{inst.kind}' (id={inst.id})")
    if not (math.isfinite(inst.strike) and inst.strike > 0):
        raise ConfigurationError(f"strike must be > 0 (id={inst.id})")
    if not (math.isfinite(inst.maturity) and 0.0 < inst.maturity <= 1.0):
        raise ConfigurationError(f"maturity must lie in (0, 1] (id={inst.id})")
    if not (math.isfinite(inst.target_price) and inst.target_price >= 0):
        raise ConfigurationError(f"target_price must be >= 0 (id={inst.id})")
    if not (math.isfinite(inst.weight) and inst.weight > 0):
        raise ConfigurationError(f"weight must be > 0 (id={inst.id})")
    if inst.kind in BARRIER_KINDS:
        if inst.barrier is None:
            raise ConfigurationError(f"barrier level required for {inst.kind} (id={inst.id})")
        if not (math.isfinite(inst.barrier) and inst.barrier > 0):
            raise ConfigurationError(f"barrier must be > 0 (id={inst.id})")
        if inst.barrier >= spot:
            raise UnsupportedFeatureError(
                f"only lower barriers (barrier < spot) are supported (id={inst.id})")
    elif inst.barrier is not None:
        raise ConfigurationError(f"barrier not allowed for {inst.kind} (id={inst.id})")


def convert_calls_to_puts(instruments: Sequence[Instrument], spot: float):
    """Replace calls by parity-equivalent puts (zero rates: C - P = S0 - K).

    Returns the converted list plus a flag array marking which entries
    were converted, so reports can quote call prices back to the user.
    """
    converted, was_call = [], []
    for inst in instruments:
        if inst.kind == EUROPEAN_CALL:
            target = inst.target_price - (spot - inst.strike)
            converted.append(replace(inst, kind=EUROPEAN_PUT, target_price=target))
            was_call.append(True)
        else:
            converted.append(inst)
            was_call.append(False)
    return converted, was_call


def required_state(instruments: Sequence[Instrument], spot: float = 1.0) -> StateSpaceKind:
    """Smallest state space (euro < barrier < lookback) covering all payoffs.

    Barrier products force at least the barrier-indicator state with
    their level included; any lookback product forces the running
    minimum, which covers lower-barrier indicators as well.
    """
    if not instruments:
        raise ConfigurationError("instrument list must not be empty")
    for inst in instruments:
        validate_instrument(inst, spot)
    levels = sorted({math.log(inst.barrier) for inst in instruments
                     if inst.kind in BARRIER_KINDS})
    if any(inst.kind == LOOKBACK_FIXED_STRIKE_PUT for inst in instruments):
        return StateSpaceKind(LOOKBACK, tuple(levels))
    if levels:
        return StateSpaceKind(BARRIER, tuple(levels))
    return StateSpaceKind(EURO)


def payoff(inst: Instrument, x: float, hit: Optional[bool] = None,
           y: Optional[float] = None) -> float:
    """Payoff in spot units at log-spot x with the given path state.

    Barrier kinds need the hit indicator (derivable from the running
    minimum when y is supplied); the lookback put needs y <= x.
    """
    if inst.kind in (EUROPEAN_PUT,):
        return max(inst.strike - math.exp(x), 0.0)
    if inst.kind == EUROPEAN_CALL:
        return max(math.exp(x) - inst.strike, 0.0)
    if inst.kind == LOOKBACK_FIXED_STRIKE_PUT:
        if y is None:
            raise ContractViolationError("lookback payoff needs the running minimum y")
        if y > x + 1e-12:
            raise ContractViolationError("running minimum must satisfy y <= x")
        return max(inst.strike - math.exp(y), 0.0)
    # barrier puts
    if hit is None:
        if y is None:
            raise ContractViolationError(f"{inst.kind} payoff needs a hit flag or y")
        hit = y <= math.log(inst.barrier)
    intrinsic = max(inst.strike - math.exp(x), 0.0)
    if inst.kind == BARRIER_DOWN_OUT_PUT:
        return 0.0 if hit else intrinsic
    if inst.kind == BARRIER_DOWN_IN_PUT:
        return intrinsic if hit else 0.0
    raise ContractViolationError(f"unhandled kind {inst.kind}")


def jump_times(instruments: Sequence[Instrument]):
    """Sorted distinct maturities (backward-induction bookkeeping)."""
    times = sorted({inst.maturity for inst in instruments})
    return times


def arbitrage_bounds(inst: Instrument, spot: float):
    """Trivially-checkable no-arbitrage price band for one (put) target."""
    if inst.kind == EUROPEAN_CALL:
        return max(spot - inst.strike, 0.0), spot
    if inst.kind in BARRIER_KINDS:
        return 0.0, inst.strike
    return max(inst.strike - spot, 0.0), inst.strike


def check_target_bounds(instruments: Sequence[Instrument], spot: float) -> None:
    for inst in instruments:
        lo, hi = arbitrage_bounds(inst, spot)
        if not (lo <= inst.target_price <= hi):
            raise ConfigurationError(
                f"target_price {inst.target_price} outside arbitrage bounds "
                f"[{lo:.6g}, {hi:.6g}] (id={inst.id})")
