"""Vectorised numpy reference implementation of the market kernels."""

import numpy as np

from .common import (
    EXP,
    INIT_UNIFORM,
    ISO,
    LOG,
    SERIES_CUTOFF,
    STATUS_CONVERGED,
    STATUS_MAX_ITERS,
    STATUS_NEGATIVE_DEMAND,
)


def investments(c, wealths, beliefs, families, etas):
    """Per-agent optimal investment rows, shape ``(N_A, N_G)``."""
    c = np.asarray(c, dtype=np.float64)
    log_ratio = np.log(beliefs) - np.log(c)
    out = np.empty_like(beliefs)

    log_rows = families == LOG
    out[log_rows] = wealths[log_rows, None] * beliefs[log_rows]

    iso_rows = families == ISO
    if iso_rows.any():
        t = c * np.exp(log_ratio[iso_rows] / etas[iso_rows, None])
        out[iso_rows] = wealths[iso_rows, None] * t / t.sum(axis=1, keepdims=True)

    exp_rows = families == EXP
    if exp_rows.any():
        lr = log_ratio[exp_rows]
        s = lr @ c
        out[exp_rows] = c * (wealths[exp_rows, None] + lr - s[:, None])
    return out


def demand(c, wealths, beliefs, families, etas):
    return investments(c, wealths, beliefs, families, etas).sum(axis=0)


def _gap(d):
    # (1 + d) log1p(d) - d, accurate near d = 0
    d = np.asarray(d, dtype=np.float64)
    small = np.abs(d) < SERIES_CUTOFF
    out = np.empty_like(d)
    ds = d[small]
    out[small] = ds * ds * (0.5 + ds * (-1.0 / 6.0 + ds * (1.0 / 12.0 + ds * (-1.0 / 20.0 + ds / 30.0))))
    dl = d[~small]
    out[~small] = (1.0 + dl) * np.log1p(dl) - dl
    return out


def objective(c, R):
    if np.any(R <= 0.0):
        return np.inf
    return float(np.sum(R * _gap((c - R) / R)))


def tatonnement(c0, wealths, beliefs, families, etas, a_init, eps, max_iters):
    c = np.array(c0, dtype=np.float64)
    R = demand(c, wealths, beliefs, families, etas)
    if np.any(R <= 0.0):
        return c, 0, 0, STATUS_NEGATIVE_DEMAND, np.empty(0), 0
    kl = objective(c, R)
    trace = [kl]
    a = a_init
    n_acc = 0
    n_prop = 0
    n_guard = 0
    while not kl < eps:
        if n_prop >= max_iters:
            return c, n_acc, n_prop, STATUS_MAX_ITERS, np.array(trace), n_guard
        n_prop += 1
        c_new = c * np.exp((1.0 - a) * np.log(R / c))
        c_new /= c_new.sum()
        R_new = demand(c_new, wealths, beliefs, families, etas)
        n_guard += bool(np.any(R_new <= 0.0))
        kl_new = objective(c_new, R_new)
        if kl_new < kl:
            c, R, kl = c_new, R_new, kl_new
            n_acc += 1
            trace.append(kl)
        else:
            a = a + (1.0 - a) / 2.0
    return c, n_acc, n_prop, STATUS_CONVERGED, np.array(trace), n_guard


def solve_many(beliefs, wealths, families, etas, a_init, eps, max_iters, init_mode):
    n_inst, _, n_goods = beliefs.shape
    C = np.empty((n_inst, n_goods))
    n_acc = np.zeros(n_inst, dtype=np.int64)
    status = np.zeros(n_inst, dtype=np.int64)
    for t in range(n_inst):
        if init_mode == INIT_UNIFORM:
            c0 = np.full(n_goods, 1.0 / n_goods)
        else:
            c0 = wealths @ beliefs[t]
            c0 = c0 / c0.sum()
        c, acc, _, st, _, _ = tatonnement(c0, wealths, beliefs[t], families, etas, a_init, eps, max_iters)
        C[t] = c
        n_acc[t] = acc
        status[t] = st
    return C, n_acc, status


def effective_beliefs(c, beliefs, families, etas):
    out = np.array(beliefs, dtype=np.float64)
    iso_rows = families == ISO
    if iso_rows.any():
        t = c * np.exp((np.log(beliefs[iso_rows]) - np.log(c)) / etas[iso_rows, None])
        out[iso_rows] = t / t.sum(axis=1, keepdims=True)
    return out
