"""Loop-form kernels compiled with numba; same contracts as ``numpy_kernels``."""

import math

import numpy as np
from numba import njit

from .common import (
    INIT_UNIFORM,
    ISO,
    LOG,
    SERIES_CUTOFF,
    STATUS_CONVERGED,
    STATUS_MAX_ITERS,
    STATUS_NEGATIVE_DEMAND,
)


@njit(cache=True)
def _demand_into(c, wealths, beliefs, families, etas, out):
    n_agents, n_goods = beliefs.shape
    row = np.empty(n_goods)
    for k in range(n_goods):
        out[k] = 0.0
    for i in range(n_agents):
        w = wealths[i]
        fam = families[i]
        if fam == LOG:
            for k in range(n_goods):
                out[k] += w * beliefs[i, k]
        elif fam == ISO:
            inv_eta = 1.0 / etas[i]
            z = 0.0
            for k in range(n_goods):
                row[k] = c[k] * math.exp(inv_eta * (math.log(beliefs[i, k]) - math.log(c[k])))
                z += row[k]
            for k in range(n_goods):
                out[k] += w * row[k] / z
        else:
            s = 0.0
            for k in range(n_goods):
                row[k] = math.log(beliefs[i, k]) - math.log(c[k])
                s += c[k] * row[k]
            for k in range(n_goods):
                out[k] += c[k] * (w + row[k] - s)


@njit(cache=True)
def demand(c, wealths, beliefs, families, etas):
    out = np.empty(beliefs.shape[1])
    _demand_into(c, wealths, beliefs, families, etas, out)
    return out


@njit(cache=True)
def _gap(d):
    if abs(d) < SERIES_CUTOFF:
        return d * d * (0.5 + d * (-1.0 / 6.0 + d * (1.0 / 12.0 + d * (-1.0 / 20.0 + d / 30.0))))
    return (1.0 + d) * math.log1p(d) - d


@njit(cache=True)
def objective(c, R):
    total = 0.0
    for k in range(c.shape[0]):
        if R[k] <= 0.0:
            return np.inf
        total += R[k] * _gap((c[k] - R[k]) / R[k])
    return total


@njit(cache=True)
def _min(x):
    m = x[0]
    for v in x:
        if v < m:
            m = v
    return m


@njit(cache=True)
def _tatonnement(c0, wealths, beliefs, families, etas, a_init, eps, max_iters, trace):
    n_goods = c0.shape[0]
    c = c0.copy()
    R = np.empty(n_goods)
    c_new = np.empty(n_goods)
    R_new = np.empty(n_goods)
    _demand_into(c, wealths, beliefs, families, etas, R)
    if _min(R) <= 0.0:
        return c, 0, 0, STATUS_NEGATIVE_DEMAND, 0, 0
    kl = objective(c, R)
    trace[0] = kl
    n_trace = 1
    a = a_init
    n_acc = 0
    n_prop = 0
    n_guard = 0
    while not kl < eps:
        if n_prop >= max_iters:
            return c, n_acc, n_prop, STATUS_MAX_ITERS, n_trace, n_guard
        n_prop += 1
        s = 0.0
        for k in range(n_goods):
            c_new[k] = c[k] * math.exp((1.0 - a) * math.log(R[k] / c[k]))
            s += c_new[k]
        for k in range(n_goods):
            c_new[k] /= s
        _demand_into(c_new, wealths, beliefs, families, etas, R_new)
        if _min(R_new) <= 0.0:
            n_guard += 1
        kl_new = objective(c_new, R_new)
        if kl_new < kl:
            c[:] = c_new
            R[:] = R_new
            kl = kl_new
            n_acc += 1
            trace[n_trace] = kl
            n_trace += 1
        else:
            a = a + (1.0 - a) / 2.0
    return c, n_acc, n_prop, STATUS_CONVERGED, n_trace, n_guard


def tatonnement(c0, wealths, beliefs, families, etas, a_init, eps, max_iters):
    trace = np.empty(max_iters + 1)
    c, n_acc, n_prop, status, n_trace, n_guard = _tatonnement(
        np.ascontiguousarray(c0, dtype=np.float64),
        wealths, beliefs, families, etas, float(a_init), float(eps), int(max_iters), trace,
    )
    return c, n_acc, n_prop, status, trace[:n_trace].copy(), n_guard


@njit(cache=True)
def _solve_many(beliefs, wealths, families, etas, a_init, eps, max_iters, init_mode):
    n_inst, n_agents, n_goods = beliefs.shape
    C = np.empty((n_inst, n_goods))
    n_acc = np.zeros(n_inst, dtype=np.int64)
    status = np.zeros(n_inst, dtype=np.int64)
    trace = np.empty(max_iters + 1)
    c0 = np.empty(n_goods)
    for t in range(n_inst):
        if init_mode == INIT_UNIFORM:
            for k in range(n_goods):
                c0[k] = 1.0 / n_goods
        else:
            s = 0.0
            for k in range(n_goods):
                v = 0.0
                for i in range(n_agents):
                    v += wealths[i] * beliefs[t, i, k]
                c0[k] = v
                s += v
            for k in range(n_goods):
                c0[k] /= s
        c, acc, _, st, _, _ = _tatonnement(c0, wealths, beliefs[t], families, etas, a_init, eps, max_iters, trace)
        C[t] = c
        n_acc[t] = acc
        status[t] = st
    return C, n_acc, status


def solve_many(beliefs, wealths, families, etas, a_init, eps, max_iters, init_mode):
    return _solve_many(
        np.ascontiguousarray(beliefs, dtype=np.float64),
        wealths, families, etas, float(a_init), float(eps), int(max_iters), int(init_mode),
    )


@njit(cache=True)
def effective_beliefs(c, beliefs, families, etas):
    n_agents, n_goods = beliefs.shape
    out = beliefs.copy()
    for i in range(n_agents):
        if families[i] != ISO:
            continue
        inv_eta = 1.0 / etas[i]
        z = 0.0
        for k in range(n_goods):
            out[i, k] = c[k] * math.exp(inv_eta * (math.log(beliefs[i, k]) - math.log(c[k])))
            z += out[i, k]
        for k in range(n_goods):
            out[i, k] /= z
    return out
