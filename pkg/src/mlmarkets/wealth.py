"""Wealth updates from market payoffs on labelled training data.

Online: agents bet their whole wealth on one data point at a time, which for
logarithmic agents is exactly a Bayes update of a posterior over agents.

Batch: wealth is split equally across all data points and every bet is placed
at start-of-epoch wealths; one epoch is one EM step for mixture weights (with
effective beliefs as component likelihoods for isoelastic agents).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import BELIEF_FLOOR, Family, MarketInstance, UtilitySpec, as_utilities, clip_belief, normalize_simplex
from .equilibrium import DEFAULT_CONFIG, SolverConfig, effective_beliefs, solve_equilibrium, solve_many
from .errors import UsageError, ValidationError


@dataclass(frozen=True)
class LabeledBeliefSet:
    """Per-agent beliefs on a set of labelled instances.

    ``beliefs`` has shape ``(N_A, N_T, N_G)``; ``targets`` holds 0-based labels.
    """

    beliefs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.beliefs, dtype=np.float64)
        if b.ndim != 3:
            raise ValidationError(f"beliefs must have shape (agents, instances, goods), got {b.shape}")
        t = np.asarray(self.targets)
        if t.shape != (b.shape[1],):
            raise ValidationError(f"expected {b.shape[1]} targets, got shape {t.shape}")
        if t.size and (not np.issubdtype(t.dtype, np.integer) or t.min() < 0 or t.max() >= b.shape[2]):
            raise ValidationError(f"targets must be integers in [0, {b.shape[2]})")
        if not np.all(np.isfinite(b)) or np.any(b < 0.0):
            raise ValidationError("beliefs must be finite and nonnegative")
        if b.shape[2] > 1:
            b = np.array(clip_belief(b, BELIEF_FLOOR))
        b.setflags(write=False)
        t = t.astype(np.int64)
        t.setflags(write=False)
        object.__setattr__(self, "beliefs", b)
        object.__setattr__(self, "targets", t)

    @property
    def num_agents(self) -> int:
        return self.beliefs.shape[0]

    @property
    def num_instances(self) -> int:
        return self.beliefs.shape[1]

    @property
    def num_goods(self) -> int:
        return self.beliefs.shape[2]

    def by_instance(self) -> np.ndarray:
        """Beliefs reordered to ``(N_T, N_A, N_G)`` for per-instance solves."""
        return np.ascontiguousarray(self.beliefs.transpose(1, 0, 2))

    def subset(self, index) -> LabeledBeliefSet:
        return LabeledBeliefSet(self.beliefs[:, index], self.targets[index])


def _check_utilities(utilities, n_agents) -> tuple[UtilitySpec, ...]:
    utilities = as_utilities(utilities, n_agents)
    if any(u.family is Family.EXPONENTIAL for u in utilities):
        raise UsageError("wealth updates use effective beliefs, defined for logarithmic and isoelastic agents only")
    return utilities


def _bayes_normalize(wealths: np.ndarray, likelihood: np.ndarray) -> np.ndarray:
    if np.all(likelihood == likelihood[0]):
        return normalize_simplex(wealths)
    return normalize_simplex(wealths * likelihood)


def online_update_step(
    wealths,
    beliefs,
    target: int,
    utilities: Sequence[UtilitySpec] | UtilitySpec,
    config: SolverConfig = DEFAULT_CONFIG,
) -> np.ndarray:
    """Settle one bet: clear the market for ``beliefs`` and pay out on ``target``.

    Every agent stakes its whole wealth, so the new wealth is proportional to
    ``W_i * P^eta_i(target)``, where ``P^eta_i`` is the agent's effective belief at
    the equilibrium prices.
    """
    market = MarketInstance(beliefs, wealths, _check_utilities(utilities, len(beliefs)))
    if not 0 <= int(target) < market.num_goods:
        raise ValidationError(f"target {target} out of range for {market.num_goods} goods")
    c = solve_equilibrium(market, config).c
    payoff = effective_beliefs(market, c)[:, int(target)]
    return _bayes_normalize(market.wealths, payoff)


def run_online_epoch(
    initial_wealths,
    data: LabeledBeliefSet,
    utilities,
    config: SolverConfig = DEFAULT_CONFIG,
) -> tuple[np.ndarray, np.ndarray]:
    """Apply ``online_update_step`` to each instance in order.

    Returns the final wealths and the ``(N_T + 1, N_A)`` trajectory whose first
    row is ``initial_wealths``. Starting from uniform wealths the result is the
    posterior over agents given the data; other priors are accepted as-is.
    """
    if data.num_instances == 0:
        raise ValidationError("online epoch needs at least one instance")
    utilities = _check_utilities(utilities, data.num_agents)
    w = normalize_simplex(initial_wealths)
    trajectory = [w]
    for t in range(data.num_instances):
        w = online_update_step(w, data.beliefs[:, t], data.targets[t], utilities, config)
        trajectory.append(w)
    return w, np.stack(trajectory)


def target_effective_beliefs(C: np.ndarray, data: LabeledBeliefSet, utilities) -> np.ndarray:
    """Effective belief of every agent in its instance's target, shape ``(N_A, N_T)``.

    ``C`` holds the equilibrium prices per instance, shape ``(N_T, N_G)``.
    """
    out = np.empty((data.num_agents, data.num_instances))
    cols = np.arange(data.num_instances)
    logC = np.log(C)
    for i, u in enumerate(utilities):
        P = data.beliefs[i]
        if u.family is Family.LOGARITHMIC:
            out[i] = P[cols, data.targets]
            continue
        t = C * np.exp((np.log(P) - logC) / u.eta)
        out[i] = t[cols, data.targets] / t.sum(axis=1)
    return out


def batch_responsibilities(
    wealths,
    data: LabeledBeliefSet,
    utilities,
    config: SolverConfig = DEFAULT_CONFIG,
) -> np.ndarray:
    """Share of each instance's payout won by each agent, shape ``(N_A, N_T)``.

    Every instance is cleared at the same (start-of-epoch) wealths, so columns
    are mixture-model responsibilities with effective beliefs as likelihoods.
    """
    utilities = _check_utilities(utilities, data.num_agents)
    w = normalize_simplex(wealths)
    if w.shape != (data.num_agents,):
        raise ValidationError(f"expected {data.num_agents} wealths, got {w.shape[0]}")
    C, _ = solve_many(data.by_instance(), w, utilities, config)
    lik = target_effective_beliefs(C, data, utilities)
    weighted = w[:, None] * lik
    resp = weighted / weighted.sum(axis=0, keepdims=True)
    ties = np.all(lik == lik[:1], axis=0)
    if ties.any():
        resp[:, ties] = w[:, None]
    return resp


def batch_update_epoch(
    wealths,
    data: LabeledBeliefSet,
    utilities,
    config: SolverConfig = DEFAULT_CONFIG,
) -> np.ndarray:
    """One batch epoch: new wealth is the agent's average responsibility.

    Dividing the accumulated payout by ``N_T`` keeps total wealth at one.
    """
    if data.num_instances == 0:
        raise ValidationError("batch epoch needs at least one instance")
    resp = batch_responsibilities(wealths, data, utilities, config)
    return normalize_simplex(resp.mean(axis=1))


def run_batch_epochs(wealths, data: LabeledBeliefSet, utilities, epochs: int, config: SolverConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Repeat ``batch_update_epoch``; returns the ``(epochs + 1, N_A)`` wealth trajectory."""
    w = normalize_simplex(wealths)
    trajectory = [w]
    for _ in range(epochs):
        w = batch_update_epoch(w, data, utilities, config)
        trajectory.append(w)
    return np.stack(trajectory)
