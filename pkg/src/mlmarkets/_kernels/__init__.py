"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is picked once at import time from the ``MLMARKETS_BACKEND``
environment variable (``numba`` or ``numpy``). When unset, numba is used if it
imports cleanly. Both implementations expose the same functions:

``demand(c, wealths, beliefs, families, etas) -> R``
    aggregate investment of all agents at prices ``c``.
``objective(c, R) -> float``
    the KL objective minimised by the tatonnement.
``tatonnement(c0, wealths, beliefs, families, etas, a_init, eps, max_iters)``
    one equilibrium solve, returning
    ``(c, n_accepted, n_proposed, status, kl_trace, n_guard)`` where ``n_guard``
    counts proposals rejected for non-positive demand.
``solve_many(beliefs, wealths, families, etas, a_init, eps, max_iters, init_mode)``
    many independent solves sharing wealths and utilities, returning
    ``(C, n_accepted, status)``.
``effective_beliefs(c, beliefs, families, etas) -> (N_A, N_G)``
"""

import importlib
import os

from . import numpy_kernels
from .common import (  # noqa: F401
    EXP,
    INIT_MIXTURE,
    INIT_UNIFORM,
    ISO,
    LOG,
    STATUS_CONVERGED,
    STATUS_MAX_ITERS,
    STATUS_NEGATIVE_DEMAND,
)

_requested = os.environ.get("MLMARKETS_BACKEND", "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise ImportError(f"MLMARKETS_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

numba_kernels = None
if _requested != "numpy":
    try:
        numba_kernels = importlib.import_module(__name__ + ".numba_kernels")
    except ImportError:
        if _requested == "numba":
            raise

if numba_kernels is not None:
    BACKEND = "numba"
    _impl = numba_kernels
else:
    BACKEND = "numpy"
    _impl = numpy_kernels

demand = _impl.demand
objective = _impl.objective
tatonnement = _impl.tatonnement
solve_many = _impl.solve_many
effective_beliefs = _impl.effective_beliefs


def get_backend():
    return BACKEND


def implementations():
    """Return ``{name: module}`` for every importable backend."""
    out = {"numpy": numpy_kernels}
    if numba_kernels is not None:
        out["numba"] = numba_kernels
    return out
