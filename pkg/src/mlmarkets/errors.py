"""Exception hierarchy shared across the package."""


class MarketError(Exception):
    """Base class for all package errors."""


class ValidationError(MarketError, ValueError):
    """Input data violates a structural invariant (bad simplex, bad shape, ...)."""


class DomainError(MarketError, ValueError):
    """Input is well formed but outside the domain of a formula (zero prices etc.)."""


class UsageError(MarketError, ValueError):
    """An operation was called on a market it does not support."""


class UnsupportedMarketError(MarketError):
    """Aggregate demand is non-positive, so the multiplicative update is undefined."""


class NonConvergenceError(MarketError):
    """An iterative solve hit its iteration budget.

    ``state`` carries whatever diagnostic object the failing routine produced
    (an ``EquilibriumResult``, a ``LagrangeSolveState``, a list of failed
    instance indices, ...).
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state
