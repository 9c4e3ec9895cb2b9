"""Market equilibrium: tatonnement solver, closed forms and alpha-mixture checks.

The solver repeatedly moves prices multiplicatively towards aggregate demand,

    c_new ∝ c * (sum_i r_i(c) / c) ** (1 - a),

and keeps a proposal only if it lowers ``KL(c || sum_i r_i(c))``. A rejected
proposal shrinks the step by moving ``a`` halfway to 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import _kernels
from .core import Family, MarketInstance, as_utilities, normalize_simplex, utility_arrays
from .errors import DomainError, NonConvergenceError, UnsupportedMarketError, UsageError, ValidationError


class InitMode(str, Enum):
    WEALTH_MIXTURE = "wealth_mixture"
    UNIFORM = "uniform"

    @property
    def code(self) -> int:
        return _kernels.INIT_MIXTURE if self is InitMode.WEALTH_MIXTURE else _kernels.INIT_UNIFORM


@dataclass(frozen=True)
class SolverConfig:
    a_init: float = 0.1
    epsilon: float = 1e-10
    max_iters: int = 10000
    c_init_mode: InitMode = InitMode.WEALTH_MIXTURE

    def __post_init__(self):
        object.__setattr__(self, "c_init_mode", InitMode(self.c_init_mode))
        if not 0.0 < self.a_init < 1.0:
            raise ValidationError(f"a_init must lie in (0, 1), got {self.a_init}")
        if not self.epsilon > 0.0:
            raise ValidationError(f"epsilon must be positive, got {self.epsilon}")
        if int(self.max_iters) < 1:
            raise ValidationError(f"max_iters must be >= 1, got {self.max_iters}")

    def to_dict(self) -> dict:
        return {
            "a_init": self.a_init,
            "epsilon": self.epsilon,
            "max_iters": int(self.max_iters),
            "c_init_mode": self.c_init_mode.value,
        }


DEFAULT_CONFIG = SolverConfig()


@dataclass
class EquilibriumResult:
    c: np.ndarray
    iterations: int
    kl_trace: np.ndarray
    converged: bool
    proposals: int = 0
    method: str = "tatonnement"
    guard_rejections: int = 0  # proposals rejected because some good had non-positive demand

    @property
    def final_kl(self) -> float:
        return float(self.kl_trace[-1]) if len(self.kl_trace) else math.nan


@dataclass
class AlphaMixtureCertificate:
    Z: np.ndarray
    V: np.ndarray
    reconstruction_error: float
    c: np.ndarray = field(repr=False)
    iterations: int = 0


def kl_divergence(p, q) -> float:
    """``sum_k p_k log(p_k / q_k)`` with the convention ``0 log 0 = 0``."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValidationError(f"shape mismatch {p.shape} vs {q.shape}")
    support = p > 0.0
    if np.any(q[support] <= 0.0):
        raise DomainError("q must be positive wherever p is")
    return float(np.sum(p[support] * np.log(p[support] / q[support])))


def initial_prices(market: MarketInstance, mode: InitMode = InitMode.WEALTH_MIXTURE) -> np.ndarray:
    if InitMode(mode) is InitMode.UNIFORM:
        return np.full(market.num_goods, 1.0 / market.num_goods)
    c0 = market.wealths @ market.beliefs
    return c0 / c0.sum()


def aggregate_demand(market: MarketInstance, c) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    return _kernels.demand(c, market.wealths, market.beliefs, market.families, market.etas)


def solve_equilibrium(market: MarketInstance, config: SolverConfig = DEFAULT_CONFIG) -> EquilibriumResult:
    """Find the price vector at which aggregate demand equals prices.

    Raises ``NonConvergenceError`` (with the partial result as ``state``) when
    ``config.max_iters`` proposals are exhausted, and ``UnsupportedMarketError``
    when the starting prices already produce non-positive demand for some good.
    """
    c0 = initial_prices(market, config.c_init_mode)
    c, n_acc, n_prop, status, trace, n_guard = _kernels.tatonnement(
        c0, market.wealths, market.beliefs, market.families, market.etas,
        config.a_init, config.epsilon, config.max_iters,
    )
    if status == _kernels.STATUS_NEGATIVE_DEMAND:
        if all(u.family is Family.EXPONENTIAL for u in market.utilities):
            c = closed_form_exp_equilibrium(market)
            return EquilibriumResult(c, 0, np.array([0.0]), True, 0, method="closed_form")
        raise UnsupportedMarketError("aggregate demand is non-positive at the initial prices")
    result = EquilibriumResult(
        normalize_simplex(c), int(n_acc), np.asarray(trace), status == _kernels.STATUS_CONVERGED,
        int(n_prop), guard_rejections=int(n_guard),
    )
    if not result.converged:
        raise NonConvergenceError(
            f"no equilibrium after {n_prop} proposals (KL={result.final_kl:.3e})", result
        )
    return result


def solve_many(beliefs, wealths, utilities, config: SolverConfig = DEFAULT_CONFIG):
    """Solve one market per instance; ``beliefs`` has shape ``(T, N_A, N_G)``.

    All instances share ``wealths`` and ``utilities``. Beliefs must already be
    clipped. Returns ``(C, n_accepted)``; raises on the first failing instance
    after all instances have been attempted.
    """
    beliefs = np.ascontiguousarray(beliefs, dtype=np.float64)
    wealths = np.ascontiguousarray(wealths, dtype=np.float64)
    if beliefs.ndim != 3 or wealths.shape != (beliefs.shape[1],):
        raise ValidationError(f"beliefs {beliefs.shape} and wealths {wealths.shape} do not match")
    families, etas = utility_arrays(as_utilities(utilities, beliefs.shape[1]))
    C, n_acc, status = _kernels.solve_many(
        beliefs, wealths, families, etas, config.a_init, config.epsilon, config.max_iters, config.c_init_mode.code,
    )
    bad = np.flatnonzero(status != _kernels.STATUS_CONVERGED)
    if bad.size:
        if np.any(status == _kernels.STATUS_NEGATIVE_DEMAND):
            raise UnsupportedMarketError(
                f"non-positive aggregate demand on instances {bad[status[bad] == 2].tolist()}"
            )
        raise NonConvergenceError(f"{bad.size} instance(s) failed to converge: {bad.tolist()[:20]}", bad.tolist())
    C /= C.sum(axis=1, keepdims=True)
    return C, n_acc


def _require_family(market: MarketInstance, family: Family, what: str):
    if any(u.family is not family for u in market.utilities):
        raise UsageError(f"{what} requires all agents to be {family.value}")


def closed_form_log_equilibrium(market: MarketInstance) -> np.ndarray:
    """Wealth-weighted mixture of beliefs, the equilibrium of logarithmic markets."""
    _require_family(market, Family.LOGARITHMIC, "closed_form_log_equilibrium")
    return normalize_simplex(market.wealths @ market.beliefs)


def closed_form_exp_equilibrium(market: MarketInstance) -> np.ndarray:
    """Normalised geometric mean of beliefs (log opinion pool)."""
    _require_family(market, Family.EXPONENTIAL, "closed_form_exp_equilibrium")
    log_pool = np.log(market.beliefs).mean(axis=0)
    return normalize_simplex(np.exp(log_pool - log_pool.max()))


def effective_beliefs(market: MarketInstance, c) -> np.ndarray:
    """Each agent's belief after interacting with prices ``c``; rows sum to one.

    An agent's investment at ``c`` is exactly its wealth times this row.
    """
    if any(u.family is Family.EXPONENTIAL for u in market.utilities):
        raise UsageError("effective beliefs are defined for logarithmic and isoelastic agents only")
    c = np.asarray(c, dtype=np.float64)
    if c.shape != (market.num_goods,):
        raise ValidationError(f"price vector must have length {market.num_goods}")
    if np.any(c <= 0.0):
        raise DomainError("prices must be strictly positive")
    return _kernels.effective_beliefs(c, market.beliefs, market.families, market.etas)


def check_effective_belief_identity(market: MarketInstance, c) -> float:
    """Max deviation between ``c`` and the wealth-weighted sum of effective beliefs."""
    c = np.asarray(c, dtype=np.float64)
    return float(np.max(np.abs(c - market.wealths @ effective_beliefs(market, c))))


def alpha_mixture_certificate(market: MarketInstance, c, tol: float = 1e-10, max_iters: int = 100000) -> AlphaMixtureCertificate:
    """Rebuild ``c`` as an alpha-mixture ``[sum_i V_i P_i^(1/eta)]^eta`` independently of the solver.

    The normalisers ``Z`` solve the implicit fixed point
    ``Z_i = sum_k [sum_j W_j/Z_j P_jk^(1/eta)]^(eta-1) P_ik^(1/eta)``,
    iterated in log space from ``Z = 1``.
    """
    if not market.is_homogeneous():
        raise UsageError("alpha-mixture certificate needs a homogeneous market")
    utility = market.utilities[0]
    if utility.family is Family.EXPONENTIAL:
        raise UsageError("alpha-mixture certificate is defined for isoelastic markets")
    eta = utility.effective_eta
    c = np.asarray(c, dtype=np.float64)
    W = market.wealths
    Q = market.beliefs ** (1.0 / eta)

    def fixed_point_map(log_z):
        mix = (W * np.exp(-log_z)) @ Q
        return np.log(Q @ mix ** (eta - 1.0))

    log_z = np.zeros(market.num_agents)
    beta = 1.0 / eta
    prev_signs = []
    for it in range(1, max_iters + 1):
        step = fixed_point_map(log_z) - log_z
        if np.max(np.abs(np.expm1(step))) <= tol:
            break
        sign = np.sign(step[np.argmax(np.abs(step))])
        prev_signs = (prev_signs + [sign])[-3:]
        if len(prev_signs) == 3 and prev_signs[0] == prev_signs[2] != prev_signs[1]:
            beta *= 0.5
            prev_signs = []
        log_z = log_z + beta * step
    else:
        raise NonConvergenceError(f"Z fixed point did not converge in {max_iters} iterations", log_z)

    Z = np.exp(log_z)
    V = W / Z
    c_rec = (V @ Q) ** eta
    return AlphaMixtureCertificate(
        Z=Z, V=V, reconstruction_error=float(np.max(np.abs(c_rec - c))), c=c_rec, iterations=it
    )
