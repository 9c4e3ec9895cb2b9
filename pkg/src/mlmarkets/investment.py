"""Optimal investment vectors for expected-utility-maximising agents.

Given wealth ``W``, belief ``P`` and prices ``c``, an agent spends all of its
wealth across the goods so as to maximise ``sum_k P_k U(r_k / c_k)``.
Closed forms exist for the logarithmic, isoelastic and exponential families;
``invest_generic`` handles any concave utility through its Lagrange
multiplier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import Family, UtilitySpec
from .errors import DomainError, NonConvergenceError, ValidationError

LAMBDA_BRACKET = (1e-12, 1e12)
MAX_BRACKET_EXPANSIONS = 200
BUDGET_TOL = 1e-12


def _check_wealth(W: float) -> float:
    W = float(W)
    if not (W >= 0.0 and math.isfinite(W)):
        raise ValidationError(f"wealth must be finite and >= 0, got {W}")
    return W


def _positive(name: str, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if np.any(x <= 0.0):
        raise DomainError(f"{name} must be strictly positive, got {x}")
    return x


def invest_logarithmic(W: float, P) -> np.ndarray:
    return _check_wealth(W) * np.asarray(P, dtype=np.float64)


def invest_isoelastic(W: float, eta: float, P, c) -> np.ndarray:
    """Isoelastic demand, ``W * c_k (P_k / c_k)^(1/eta)`` normalised over goods."""
    W = _check_wealth(W)
    if not eta > 0.0:
        raise ValidationError(f"eta must be positive, got {eta}")
    c = _positive("prices", c)
    P = np.asarray(P, dtype=np.float64)
    if eta == 1.0:
        return invest_logarithmic(W, P)
    with np.errstate(divide="ignore"):
        t = c * np.exp((np.log(P) - np.log(c)) / eta)
    return W * t / t.sum()


def invest_exponential(W: float, P, c) -> np.ndarray:
    """Exponential-utility demand; entries can be negative (short positions)."""
    W = _check_wealth(W)
    c = _positive("prices", c)
    P = _positive("beliefs", P)
    log_ratio = np.log(P) - np.log(c)
    return c * (W + log_ratio - c @ log_ratio)


def invest(utility: UtilitySpec, W: float, P, c) -> np.ndarray:
    if utility.family is Family.LOGARITHMIC:
        return invest_logarithmic(W, P)
    if utility.family is Family.ISOELASTIC:
        return invest_isoelastic(W, utility.eta, P, c)
    return invest_exponential(W, P, c)


def marginal_utility_inverse(utility: UtilitySpec) -> Callable[[np.ndarray], np.ndarray]:
    """Inverse of ``U'`` for the built-in families."""
    if utility.family is Family.LOGARITHMIC:
        return lambda y: 1.0 / y
    if utility.family is Family.ISOELASTIC:
        eta = utility.eta
        return lambda y: y ** (-1.0 / eta)
    return lambda y: -np.log(y)


@dataclass
class LagrangeSolveState:
    lam: float
    bracket: tuple[float, float]
    residual: float


def invest_generic(marginal_utility_inverse: Callable, W: float, P, c, tol: float = BUDGET_TOL) -> np.ndarray:
    """Solve the first-order conditions ``r_k = c_k (U')^{-1}(lam c_k / P_k)`` for ``lam``.

    ``sum_k r_k(lam)`` is decreasing in ``lam`` for concave utilities, so the
    multiplier is found by bisection (in log space) once a sign change has been
    bracketed.
    """
    W = _check_wealth(W)
    c = _positive("prices", c)
    P = _positive("beliefs", P)
    if W <= 0.0:
        raise ValidationError("invest_generic needs W > 0")

    def residual(lam):
        return float(np.sum(c * marginal_utility_inverse(lam * c / P))) - W

    lo, hi = LAMBDA_BRACKET
    f_lo, f_hi = residual(lo), residual(hi)
    expansions = 0
    while not (f_lo >= 0.0 >= f_hi):
        if expansions >= MAX_BRACKET_EXPANSIONS:
            raise NonConvergenceError(
                "could not bracket the Lagrange multiplier",
                LagrangeSolveState(math.sqrt(lo * hi), (lo, hi), f_hi if abs(f_hi) < abs(f_lo) else f_lo),
            )
        if f_lo < 0.0:
            lo /= 1e3
            f_lo = residual(lo)
        if f_hi > 0.0:
            hi *= 1e3
            f_hi = residual(hi)
        expansions += 1

    log_lo, log_hi = math.log(lo), math.log(hi)
    lam, f = lo, f_lo
    for _ in range(400):
        mid = 0.5 * (log_lo + log_hi)
        lam = math.exp(mid)
        f = residual(lam)
        if abs(f) <= tol:
            break
        if f > 0.0:
            log_lo = mid
        else:
            log_hi = mid
        if log_hi - log_lo <= 4.0 * np.finfo(float).eps * max(1.0, abs(mid)):
            break
    if abs(f) > tol:
        raise NonConvergenceError(
            "bisection stalled before the budget residual met tolerance",
            LagrangeSolveState(lam, (math.exp(log_lo), math.exp(log_hi)), f),
        )
    return c * marginal_utility_inverse(lam * c / P)
