"""Randomised invariant checks, run by ``mlmarkets verify``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import MarketInstance, UtilitySpec, utility_arrays
from .equilibrium import (
    SolverConfig,
    alpha_mixture_certificate,
    check_effective_belief_identity,
    closed_form_exp_equilibrium,
    closed_form_log_equilibrium,
    solve_equilibrium,
)
from .investment import (
    invest,
    invest_exponential,
    invest_generic,
    invest_isoelastic,
    marginal_utility_inverse,
)
from .wealth import LabeledBeliefSet, batch_update_epoch, run_online_epoch

TIGHT = SolverConfig(epsilon=1e-20)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def _dirichlet(rng, n, k, alpha=1.0):
    p = rng.dirichlet(np.full(k, alpha), size=n)
    p = np.maximum(p, 1e-6)
    return p / p.sum(axis=1, keepdims=True)


def _random_market(rng, utility_factory, max_agents=10, max_goods=8):
    na = int(rng.integers(2, max_agents + 1))
    ng = int(rng.integers(2, max_goods + 1))
    utilities = [utility_factory(rng) for _ in range(na)]
    return MarketInstance(_dirichlet(rng, na, ng), rng.dirichlet(np.ones(na)), utilities)


def _iso(rng):
    return UtilitySpec.isoelastic(float(rng.uniform(1.0, 12.0)))


def check_budget(rng, n):
    worst = 0.0
    for _ in range(n):
        ng = int(rng.integers(2, 8))
        P, c = _dirichlet(rng, 2, ng)
        W = float(rng.uniform(0.01, 2.0))
        for r in (invest(UtilitySpec.logarithmic(), W, P, c), invest_isoelastic(W, rng.uniform(0.2, 10), P, c),
                  invest_exponential(W, P, c)):
            worst = max(worst, abs(r.sum() - W))
    return worst <= 1e-10, f"max |sum r - W| = {worst:.2e}"


def check_generic(rng, n):
    worst = 0.0
    for _ in range(n):
        ng = int(rng.integers(1, 8))
        P, c = _dirichlet(rng, 2, ng)
        W = float(rng.uniform(0.05, 1.0))
        for u in (UtilitySpec.logarithmic(), UtilitySpec.isoelastic(3.0), UtilitySpec.exponential()):
            r = invest_generic(marginal_utility_inverse(u), W, P, c)
            worst = max(worst, float(np.max(np.abs(r - invest(u, W, P, c)))))
    return worst <= 1e-10, f"max deviation from closed forms = {worst:.2e}"


def check_closed_forms(rng, n):
    worst = 0.0
    for _ in range(n):
        m = _random_market(rng, lambda r: UtilitySpec.logarithmic())
        worst = max(worst, float(np.max(np.abs(solve_equilibrium(m, TIGHT).c - closed_form_log_equilibrium(m)))))
        na, ng = int(rng.integers(2, 6)), int(rng.integers(2, 5))
        me = MarketInstance(_dirichlet(rng, na, ng, alpha=20.0), np.ones(na), UtilitySpec.exponential())
        res = solve_equilibrium(me, TIGHT)
        worst = max(worst, float(np.max(np.abs(res.c - closed_form_exp_equilibrium(me)))))
    return worst <= 1e-8, f"max deviation = {worst:.2e}"


def check_identity_and_trace(rng, n):
    worst, monotone = 0.0, True
    for _ in range(n):
        m = _random_market(rng, _iso)
        res = solve_equilibrium(m, TIGHT)
        monotone &= bool(np.all(np.diff(res.kl_trace) < 0))
        worst = max(worst, check_effective_belief_identity(m, res.c))
    return worst <= 1e-8 and monotone, f"max residual = {worst:.2e}, KL traces strictly decreasing: {monotone}"


def check_certificate(rng, n):
    worst = 0.0
    for _ in range(n):
        eta = float(rng.choice([2.0, 5.0, 10.0]))
        m = _random_market(rng, lambda r: UtilitySpec.isoelastic(eta))
        worst = max(worst, alpha_mixture_certificate(m, solve_equilibrium(m, TIGHT).c).reconstruction_error)
    return worst <= 1e-7, f"max reconstruction error = {worst:.2e}"


def check_agent_split(rng, n):
    worst = 0.0
    for _ in range(n):
        m = _random_market(rng, _iso)
        j = int(rng.integers(m.num_agents))
        beliefs = np.vstack([m.beliefs, m.beliefs[j]])
        wealths = np.append(m.wealths, m.wealths[j] / 2)
        wealths[j] /= 2
        split = MarketInstance(beliefs, wealths, m.utilities + (m.utilities[j],))
        diff = np.max(np.abs(solve_equilibrium(m, TIGHT).c - solve_equilibrium(split, TIGHT).c))
        worst = max(worst, float(diff))
    return worst <= 1e-8, f"max change = {worst:.2e}"


def check_permutation(rng, n):
    worst = 0.0
    for _ in range(n):
        m = _random_market(rng, _iso)
        perm = rng.permutation(m.num_goods)
        c = solve_equilibrium(m, TIGHT).c
        c_perm = solve_equilibrium(m.with_beliefs(m.beliefs[:, perm]), TIGHT).c
        worst = max(worst, float(np.max(np.abs(c[perm] - c_perm))))
    return worst <= 1e-8, f"max deviation = {worst:.2e}"


def check_bayes_and_em(rng, n):
    worst_bayes, worst_em = 0.0, 0.0
    for _ in range(n):
        na, nt, ng = int(rng.integers(2, 11)), int(rng.integers(1, 51)), int(rng.integers(2, 6))
        beliefs = np.stack([_dirichlet(rng, nt, ng) for _ in range(na)])
        targets = rng.integers(0, ng, size=nt)
        data = LabeledBeliefSet(beliefs, targets)
        lik = data.beliefs[:, np.arange(nt), targets]
        prior = np.full(na, 1.0 / na)
        log_post = np.log(lik).sum(axis=1)
        post = np.exp(log_post - log_post.max())
        post /= post.sum()
        final, _ = run_online_epoch(prior, data, UtilitySpec.logarithmic())
        worst_bayes = max(worst_bayes, float(np.max(np.abs(final - post))))
        w = rng.dirichlet(np.ones(na))
        resp = w[:, None] * lik
        em = (resp / resp.sum(axis=0)).mean(axis=1)
        worst_em = max(worst_em, float(np.max(np.abs(batch_update_epoch(w, data, UtilitySpec.logarithmic()) - em))))
    ok = worst_bayes <= 1e-10 and worst_em <= 1e-12
    return ok, f"Bayes max dev = {worst_bayes:.2e}, EM max dev = {worst_em:.2e}"


def check_backends(rng, n):
    impls = _kernels.implementations()
    if len(impls) < 2:
        return True, "only the numpy backend is available"
    worst = 0.0
    for _ in range(n):
        m = _random_market(rng, _iso)
        fam, eta = utility_arrays(m.utilities)
        batch = np.stack([m.beliefs, m.beliefs[:, ::-1].copy()])
        C = [impl.solve_many(batch, m.wealths, fam, eta, 0.1, 1e-20, 10000, 0)[0] for impl in impls.values()]
        worst = max(worst, float(np.max(np.abs(C[0] - C[1]))))
    return worst <= 1e-10, f"max numba/numpy disagreement = {worst:.2e}"


CHECKS = {
    "budget identity": check_budget,
    "generic Lagrange solve matches closed forms": check_generic,
    "solver matches log/exp closed forms": check_closed_forms,
    "effective-belief identity and KL monotonicity": check_identity_and_trace,
    "alpha-mixture certificate": check_certificate,
    "agent-split invariance": check_agent_split,
    "permutation equivariance": check_permutation,
    "Bayes / EM equivalence (eta = 1)": check_bayes_and_em,
    "numba and numpy backends agree": check_backends,
}


def run_checks(seed: int = 0, n: int = 20) -> list[CheckResult]:
    results = []
    for i, (name, fn) in enumerate(CHECKS.items()):
        rng = np.random.default_rng([seed, i])
        ok, detail = fn(rng, n)
        results.append(CheckResult(name, bool(ok), detail))
    return results
