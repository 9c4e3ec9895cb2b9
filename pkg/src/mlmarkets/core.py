"""Core market types: simplex vectors, utility specs, agents and market instances.

Simplex vectors are plain read-only ``numpy`` arrays; the helpers here are the
only sanctioned way to build them from raw data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from ._kernels import EXP, ISO, LOG
from .errors import ValidationError

SIMPLEX_TOL = 1e-12
BELIEF_FLOOR = 1e-9


def _frozen(x: np.ndarray) -> np.ndarray:
    x.setflags(write=False)
    return x


def normalize_simplex(raw) -> np.ndarray:
    """Scale a nonnegative vector so that it sums to one.

    Raises ``ValidationError`` for empty, negative, non-finite or all-zero input.
    """
    x = np.array(raw, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValidationError(f"simplex vector must be a non-empty 1-d array, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("simplex vector contains non-finite entries")
    if np.any(x < 0.0):
        raise ValidationError(f"simplex vector has negative entries: {x}")
    total = x.sum()
    if total <= 0.0:
        raise ValidationError("simplex vector sums to zero")
    return _frozen(x / total)


def is_simplex(x, tol: float = SIMPLEX_TOL) -> bool:
    x = np.asarray(x, dtype=np.float64)
    return x.ndim == 1 and x.size >= 1 and bool(np.all(x >= 0.0)) and abs(x.sum() - 1.0) <= tol


def clip_belief(p, floor: float = BELIEF_FLOOR) -> np.ndarray:
    """Raise every entry of ``p`` to at least ``floor`` while keeping it a distribution.

    Entries below the floor are set to it and the remaining mass is scaled down
    proportionally, so the result sums to one with every entry >= ``floor``.
    Vectors that already satisfy the floor are returned unchanged.
    Works row-wise on 2-d input as well.
    """
    p = np.asarray(p, dtype=np.float64)
    n_goods = p.shape[-1]
    if not 0.0 < floor < 1.0 / n_goods:
        raise ValidationError(f"belief floor must lie in (0, 1/{n_goods}), got {floor}")
    if p.ndim == 1:
        return _frozen(_clip_rows(p[None, :], floor)[0])
    return _frozen(_clip_rows(p.reshape(-1, n_goods), floor).reshape(p.shape))


def _clip_rows(rows: np.ndarray, floor: float) -> np.ndarray:
    rows = rows / rows.sum(axis=1, keepdims=True)
    out = rows.copy()
    low = rows < floor
    for r in np.flatnonzero(low.any(axis=1)):
        mask = low[r]
        # entries forced up to the floor; the rest share what remains
        while True:
            free_mass = rows[r, ~mask].sum()
            scale = (1.0 - floor * mask.sum()) / free_mass
            scaled = rows[r] * scale
            newly_low = (~mask) & (scaled < floor)
            if not newly_low.any():
                break
            mask = mask | newly_low
        out[r] = np.where(mask, floor, scaled)
    return out


class Family(str, Enum):
    LOGARITHMIC = "logarithmic"
    EXPONENTIAL = "exponential"
    ISOELASTIC = "isoelastic"


_FAMILY_CODES = {Family.LOGARITHMIC: LOG, Family.ISOELASTIC: ISO, Family.EXPONENTIAL: EXP}


@dataclass(frozen=True)
class UtilitySpec:
    """Utility family plus the isoelastic risk-aversion parameter.

    ``UtilitySpec.isoelastic(1.0)`` canonicalises to the logarithmic family, so
    the singular exponent of the isoelastic formula is never evaluated at 1.
    """

    family: Family
    eta: float | None = None

    def __post_init__(self):
        family = Family(self.family)
        object.__setattr__(self, "family", family)
        if family is Family.ISOELASTIC:
            if self.eta is None or not math.isfinite(self.eta) or self.eta <= 0.0:
                raise ValidationError(f"isoelastic utility needs a finite eta > 0, got {self.eta}")
            if self.eta == 1.0:
                object.__setattr__(self, "family", Family.LOGARITHMIC)
                object.__setattr__(self, "eta", None)
            else:
                object.__setattr__(self, "eta", float(self.eta))
        elif self.eta is not None:
            raise ValidationError(f"{family.value} utility takes no eta")

    @classmethod
    def logarithmic(cls) -> UtilitySpec:
        return cls(Family.LOGARITHMIC)

    @classmethod
    def exponential(cls) -> UtilitySpec:
        return cls(Family.EXPONENTIAL)

    @classmethod
    def isoelastic(cls, eta: float) -> UtilitySpec:
        return cls(Family.ISOELASTIC, eta)

    @property
    def code(self) -> int:
        return _FAMILY_CODES[self.family]

    @property
    def effective_eta(self) -> float:
        """eta used by the investment formulas (1 for logarithmic, nan for exponential)."""
        if self.family is Family.ISOELASTIC:
            return self.eta
        if self.family is Family.LOGARITHMIC:
            return 1.0
        return math.nan

    def to_dict(self) -> dict:
        if self.family is Family.ISOELASTIC:
            return {"family": self.family.value, "eta": self.eta}
        return {"family": self.family.value}

    @classmethod
    def from_dict(cls, d: dict) -> UtilitySpec:
        try:
            family = Family(str(d["family"]).lower())
        except (KeyError, ValueError) as exc:
            raise ValidationError(f"bad utility spec {d!r}") from exc
        if family is Family.ISOELASTIC:
            return cls.isoelastic(float(d.get("eta", math.nan)))
        return cls(family)


def utility_arrays(utilities: Sequence[UtilitySpec]) -> tuple[np.ndarray, np.ndarray]:
    """Kernel-ready ``(families, etas)`` arrays for a sequence of utilities."""
    families = np.array([u.code for u in utilities], dtype=np.int64)
    etas = np.array([u.effective_eta if u.family is not Family.EXPONENTIAL else 1.0 for u in utilities])
    return families, etas


def as_utilities(spec, n_agents: int) -> tuple[UtilitySpec, ...]:
    """Broadcast ``spec`` (a UtilitySpec, an eta, or a sequence of either) over agents."""
    if isinstance(spec, UtilitySpec):
        return (spec,) * n_agents
    if np.isscalar(spec):
        return (UtilitySpec.isoelastic(float(spec)),) * n_agents
    items = list(spec)
    if len(items) != n_agents:
        raise ValidationError(f"expected {n_agents} utilities, got {len(items)}")
    return tuple(u if isinstance(u, UtilitySpec) else UtilitySpec.isoelastic(float(u)) for u in items)


@dataclass(frozen=True)
class Agent:
    id: str
    utility: UtilitySpec
    wealth: float
    belief: np.ndarray

    def __post_init__(self):
        if not (self.wealth >= 0.0 and math.isfinite(self.wealth)):
            raise ValidationError(f"agent {self.id!r}: wealth must be finite and >= 0, got {self.wealth}")
        object.__setattr__(self, "belief", normalize_simplex(self.belief))


@dataclass(frozen=True)
class MarketInstance:
    """A single-outcome market: agent beliefs over ``num_goods`` outcomes plus wealths.

    Wealths are renormalised to sum to one at construction. Beliefs are clipped
    to ``belief_floor`` so that every agent assigns positive mass to every good.
    """

    beliefs: np.ndarray
    wealths: np.ndarray
    utilities: tuple[UtilitySpec, ...]
    ids: tuple[str, ...] = ()
    belief_floor: float = BELIEF_FLOOR
    families: np.ndarray = field(init=False, repr=False, compare=False)
    etas: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        beliefs = np.array(self.beliefs, dtype=np.float64)
        if beliefs.ndim != 2 or beliefs.shape[0] < 1 or beliefs.shape[1] < 1:
            raise ValidationError(f"beliefs must be an (agents, goods) matrix, got shape {beliefs.shape}")
        n_agents, n_goods = beliefs.shape
        if not np.all(np.isfinite(beliefs)) or np.any(beliefs < 0.0):
            raise ValidationError("beliefs must be finite and nonnegative")
        if np.any(beliefs.sum(axis=1) <= 0.0):
            raise ValidationError("every belief row needs positive mass")
        if n_goods > 1:
            beliefs = np.array(clip_belief(beliefs, self.belief_floor))
        else:
            beliefs = np.ones_like(beliefs)
        object.__setattr__(self, "beliefs", _frozen(np.ascontiguousarray(beliefs)))

        w = np.ravel(np.array(self.wealths, dtype=np.float64))
        if w.shape != (n_agents,):
            raise ValidationError(f"expected {n_agents} wealths, got {w.shape[0]}")
        object.__setattr__(self, "wealths", normalize_simplex(w))

        utilities = as_utilities(self.utilities, n_agents)
        object.__setattr__(self, "utilities", utilities)
        ids = tuple(self.ids) if self.ids else tuple(f"agent{i}" for i in range(n_agents))
        if len(ids) != n_agents:
            raise ValidationError(f"expected {n_agents} ids, got {len(ids)}")
        object.__setattr__(self, "ids", ids)
        families, etas = utility_arrays(utilities)
        object.__setattr__(self, "families", _frozen(families))
        object.__setattr__(self, "etas", _frozen(etas))

    @classmethod
    def from_agents(cls, agents: Sequence[Agent], belief_floor: float = BELIEF_FLOOR) -> MarketInstance:
        if not agents:
            raise ValidationError("a market needs at least one agent")
        sizes = {a.belief.shape[0] for a in agents}
        if len(sizes) != 1:
            raise ValidationError(f"agents disagree on the number of goods: {sorted(sizes)}")
        return cls(
            beliefs=np.stack([a.belief for a in agents]),
            wealths=[a.wealth for a in agents],
            utilities=tuple(a.utility for a in agents),
            ids=tuple(a.id for a in agents),
            belief_floor=belief_floor,
        )

    @property
    def num_agents(self) -> int:
        return self.beliefs.shape[0]

    @property
    def num_goods(self) -> int:
        return self.beliefs.shape[1]

    @property
    def agents(self) -> list[Agent]:
        return [
            Agent(i, u, float(w), b)
            for i, u, w, b in zip(self.ids, self.utilities, self.wealths, self.beliefs)
        ]

    def with_wealths(self, wealths) -> MarketInstance:
        return MarketInstance(self.beliefs, wealths, self.utilities, self.ids, self.belief_floor)

    def with_beliefs(self, beliefs) -> MarketInstance:
        return MarketInstance(beliefs, self.wealths, self.utilities, self.ids, self.belief_floor)

    def is_homogeneous(self) -> bool:
        return len(set(self.utilities)) == 1
