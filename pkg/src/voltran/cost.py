"""Convex penalty on the variance rate and its numerical conjugate.

The model cost charges a rate F(beta) = a*(beta/v)^p + b*(beta/v)^(-q) + c
per unit time for running the diffusion at variance rate beta, where
v = sigma_bar^2 is the reference variance.  The constants b and c are
derived so that F has its minimum, equal to zero, exactly at beta = v.
Drift is tied to the variance through the martingale condition on the
log-price, -2*alpha = beta, so the Hamiltonian of the dual PDE collapses
to a one-dimensional conjugate

    G*(z) = sup_{beta in [beta_min, beta_max]} beta*z - F(beta),

evaluated here by safeguarded Newton on the strictly increasing F'.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError

NEWTON_TOL = 1e-10
MAX_NEWTON_ITERS = 100


@dataclass(frozen=True)
class CostSpec:
    """Parameters of the variance penalty, frozen after validation.

    sigma_bar is per sqrt(year); v_bar, beta_min, beta_max are variance
    rates per year.  b and c are derived, not free.
    """

    sigma_bar: float
    v_bar: float
    p_exp: float
    q_exp: float
    a: float
    b: float
    c: float
    beta_min: float
    beta_max: float


def make_cost_spec(sigma_bar, p_exp=2.0, q_exp=2.0, a=1.0,
                   beta_min=None, beta_max=None) -> CostSpec:
    """Build and validate a CostSpec.

    b = a*p/q and c = -(a+b) force F(v_bar) = 0 and F'(v_bar) = 0.  The
    admissible variance band defaults to (0.01*v_bar, 9*v_bar).
    """
    if not (isinstance(sigma_bar, (int, float)) and math.isfinite(sigma_bar) and sigma_bar > 0):
        raise ConfigurationError("sigma_bar must be a finite positive number")
    if not (math.isfinite(p_exp) and p_exp > 1):
        raise ConfigurationError("p_exp must be > 1")
    if not (math.isfinite(q_exp) and q_exp > 1):
        raise ConfigurationError("q_exp must be > 1")
    if not (math.isfinite(a) and a > 0):
        raise ConfigurationError("a must be > 0")

    v_bar = sigma_bar * sigma_bar
    if beta_min is None:
        beta_min = 0.01 * v_bar
    if beta_max is None:
        beta_max = 9.0 * v_bar
    if not (math.isfinite(beta_min) and beta_min > 0):
        raise ConfigurationError("beta_min must be > 0")
    if not (math.isfinite(beta_max) and beta_max > beta_min):
        raise ConfigurationError("beta_max must exceed beta_min")
    if not (beta_min < v_bar < beta_max):
        raise ConfigurationError(
            "beta_min/beta_max must bracket sigma_bar**2 "
            f"(got [{beta_min}, {beta_max}] around {v_bar})")

    b = a * p_exp / q_exp
    c = -(a + b)
    return CostSpec(sigma_bar=float(sigma_bar), v_bar=float(v_bar),
                    p_exp=float(p_exp), q_exp=float(q_exp),
                    a=float(a), b=float(b), c=float(c),
                    beta_min=float(beta_min), beta_max=float(beta_max))


def _pow(u, e):
    # integral exponents dominate in practice; np.power on floats is slow
    if e == 2.0:
        return u * u
    if e == 1.0:
        return u
    if e == 3.0:
        return u * u * u
    if e == 4.0:
        u2 = u * u
        return u2 * u2
    if e == 0.0:
        return np.ones_like(u)
    return u ** e


def penalty_raw(spec: CostSpec, beta):
    """F(beta) without domain checks; hot path for in-band arrays."""
    u = beta / spec.v_bar
    return spec.a * _pow(u, spec.p_exp) + spec.b / _pow(u, spec.q_exp) + spec.c


def penalty(spec: CostSpec, beta):
    """Cost rate F(beta); nonnegative, zero only at beta = v_bar.

    Accepts scalars or arrays.  Raises DomainError off the positive cone.
    """
    arr = np.asarray(beta, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr <= 0.0):
        raise DomainError("beta must be finite and > 0")
    value = penalty_raw(spec, arr)
    if np.ndim(beta) == 0:
        return float(value)
    return value


def penalty_prime(spec: CostSpec, beta):
    """dF/dbeta, strictly increasing on (0, inf)."""
    u = np.asarray(beta, dtype=float) / spec.v_bar
    return (spec.a * spec.p_exp * _pow(u, spec.p_exp - 1.0)
            - spec.b * spec.q_exp / _pow(u, spec.q_exp + 1.0)) / spec.v_bar


def penalty_second(spec: CostSpec, beta):
    """d2F/dbeta2 > 0 (strict convexity)."""
    u = np.asarray(beta, dtype=float) / spec.v_bar
    return (spec.a * spec.p_exp * (spec.p_exp - 1.0) * _pow(u, spec.p_exp - 2.0)
            + spec.b * spec.q_exp * (spec.q_exp + 1.0) / _pow(u, spec.q_exp + 2.0)
            ) / (spec.v_bar * spec.v_bar)


def beta_star_array(spec: CostSpec, z, beta0=None):
    """Maximizer of beta*z - F(beta) over the band, vectorized.

    Newton on F'(beta) = z with a bisection safeguard; the bracket
    [beta_min, beta_max] is maintained so convergence is guaranteed.
    Interior roots are resolved to |F'(beta) - z| < 1e-10.
    """
    z_in = np.asarray(z, dtype=float)
    z1 = np.atleast_1d(z_in).reshape(-1)
    f_lo = float(penalty_prime(spec, spec.beta_min))
    f_hi = float(penalty_prime(spec, spec.beta_max))

    out = np.empty_like(z1)
    out[z1 <= f_lo] = spec.beta_min
    out[z1 >= f_hi] = spec.beta_max
    interior = (z1 > f_lo) & (z1 < f_hi)
    if np.any(interior):
        zi = z1[interior]
        if beta0 is not None:
            b0 = np.broadcast_to(np.asarray(beta0, dtype=float), z_in.shape)
            beta = np.clip(np.atleast_1d(b0).reshape(-1)[interior],
                           spec.beta_min, spec.beta_max).astype(float)
        else:
            beta = np.full(zi.shape, spec.v_bar)
        lo = np.full(zi.shape, spec.beta_min)
        hi = np.full(zi.shape, spec.beta_max)

        active = np.arange(zi.size)
        for _ in range(MAX_NEWTON_ITERS):
            b = beta[active]
            f = penalty_prime(spec, b) - zi[active]
            keep = np.abs(f) >= NEWTON_TOL
            active, b, f = active[keep], b[keep], f[keep]
            if active.size == 0:
                break
            # shrink the bracket by the sign of the residual, then try Newton
            pos = f > 0
            hi[active[pos]] = b[pos]
            lo[active[~pos]] = b[~pos]
            step = b - f / penalty_second(spec, b)
            inside = (step > lo[active]) & (step < hi[active])
            beta[active] = np.where(inside, step, 0.5 * (lo[active] + hi[active]))
        out[interior] = beta
    return out.reshape(z_in.shape) if z_in.ndim else out[0]


def conjugate(spec: CostSpec, z):
    """Restricted conjugate G*(z) = sup over the band of beta*z - F(beta).

    Returns (value, beta_star).
    """
    if not math.isfinite(z):
        raise DomainError("z must be finite")
    bstar = float(beta_star_array(spec, np.asarray(z, dtype=float)))
    return bstar * z - penalty(spec, bstar), bstar


def conjugate_array(spec: CostSpec, z, beta0=None):
    """Vectorized (G*(z), beta_star(z)) for the PDE solver hot path."""
    bstar = beta_star_array(spec, z, beta0=beta0)
    return bstar * np.asarray(z, dtype=float) - penalty(spec, bstar), bstar


def hstar(spec: CostSpec, p_grad, q_half_hess):
    """Dual Hamiltonian on the martingale line.

    With first-derivative argument p and half-Hessian argument q the
    Hamiltonian reduces to G*(q - p/2).  Returns (value, alpha, beta)
    where (alpha, beta) = (-beta_star/2, beta_star) is the gradient of
    the Hamiltonian, i.e. the optimal drift and variance rates.
    """
    if not (math.isfinite(p_grad) and math.isfinite(q_half_hess)):
        raise DomainError("hstar arguments must be finite")
    value, bstar = conjugate(spec, q_half_hess - 0.5 * p_grad)
    return value, -0.5 * bstar, bstar
