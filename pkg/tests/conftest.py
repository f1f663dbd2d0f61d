"""Shared fixtures and closed-form oracles.

Oracles are kept independent of the package internals: Black-Scholes
via the normal CDF, barrier and lookback prices by quadrature of the
reflection-principle joint densities for drifted Brownian motion.
"""

import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

import voltran as vt
from voltran import instruments as ins
from voltran import statespace as ss


def bs_put(spot, strike, maturity, sigma):
    """Zero-rate Black-Scholes put."""
    sd = sigma * math.sqrt(maturity)
    d1 = (math.log(spot / strike) + 0.5 * sigma * sigma * maturity) / sd
    d2 = d1 - sd
    return strike * norm.cdf(-d2) - spot * norm.cdf(-d1)


def down_out_put_ref(spot, strike, log_barrier, maturity, sigma):
    """Continuously monitored down-and-out put, zero rates, by quadrature.

    Integrates the payoff against the joint density of (X_T, min > b)
    for X = log-price started at log(spot) with drift -sigma^2/2.
    """
    x0 = math.log(spot)
    nu = -0.5 * sigma * sigma
    sd = sigma * math.sqrt(maturity)
    b = log_barrier
    if b >= x0:
        return 0.0

    def density(z):
        return (norm.pdf((z - x0 - nu * maturity) / sd)
                - math.exp(2.0 * nu * (b - x0) / (sigma * sigma))
                * norm.pdf((z - 2.0 * b + x0 - nu * maturity) / sd)) / sd

    hi = math.log(strike)
    if hi <= b:
        return 0.0
    value, _ = quad(lambda z: (strike - math.exp(z)) * density(z), b, hi,
                    limit=200)
    return value


def lookback_put_ref(spot, strike, maturity, sigma):
    """Fixed-strike lookback put on the running minimum, zero rates."""
    x0 = math.log(spot)
    nu = -0.5 * sigma * sigma
    sd = sigma * math.sqrt(maturity)
    cap = math.log(strike)

    def cdf_min(m):
        if m >= x0:
            return 1.0
        return (norm.cdf((m - x0 - nu * maturity) / sd)
                + math.exp(2.0 * nu * (m - x0) / (sigma * sigma))
                * norm.cdf((m - x0 + nu * maturity) / sd))

    if cap <= x0:
        # payoff (K - e^min)^+ active only below log K
        value, _ = quad(lambda m: math.exp(m) * cdf_min(m), x0 - 12 * sd, cap,
                        limit=400)
        return value
    # min is capped at x0, so the payoff has a deterministic floor
    value, _ = quad(lambda m: math.exp(m) * cdf_min(m), x0 - 12 * sd, x0,
                    limit=400)
    return value + (strike - spot)


@pytest.fixture(scope="session")
def cost_spec():
    return vt.make_cost_spec(0.2)


@pytest.fixture(scope="session")
def euro_put():
    return ins.Instrument(id="p", kind=ins.EUROPEAN_PUT, strike=1.0,
                          maturity=1.0, target_price=0.08)


@pytest.fixture(scope="session")
def euro_grid(euro_put):
    return ss.build_grid(ss.GridConfig(n_x=201, n_t=80), [euro_put],
                         spot=1.0, sigma_bar=0.2)


def make_instrument(id, kind, strike, maturity, target=0.05, barrier=None,
                    weight=1.0):
    return ins.Instrument(id=id, kind=kind, strike=strike, maturity=maturity,
                          target_price=target, barrier=barrier, weight=weight)


def mixed_instruments():
    """Small euro + barrier + lookback set exercising every coupling."""
    return [
        make_instrument("eu", ins.EUROPEAN_PUT, 1.0, 1.0),
        make_instrument("do", ins.BARRIER_DOWN_OUT_PUT, 1.0, 0.5, barrier=0.85),
        make_instrument("lb", ins.LOOKBACK_FIXED_STRIKE_PUT, 0.95, 1.0),
    ]
