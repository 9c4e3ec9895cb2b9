import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mlmarkets.core import UtilitySpec
from mlmarkets.errors import DomainError, NonConvergenceError, ValidationError
from mlmarkets.investment import (
    LagrangeSolveState,
    invest,
    invest_exponential,
    invest_generic,
    invest_isoelastic,
    invest_logarithmic,
    marginal_utility_inverse,
)

from conftest import random_simplex

seeds = st.integers(0, 2**31)


def test_logarithmic_examples():
    np.testing.assert_allclose(invest_logarithmic(1.0, [0.3, 0.7]), [0.3, 0.7])
    np.testing.assert_allclose(invest_logarithmic(0.5, [0.25] * 4), [0.125] * 4)
    np.testing.assert_array_equal(invest_logarithmic(0.0, [0.1, 0.9]), [0.0, 0.0])


def test_isoelastic_examples():
    np.testing.assert_allclose(invest(UtilitySpec.isoelastic(1.0), 1.0, [0.2, 0.8], [0.7, 0.3]), [0.2, 0.8])
    c = np.array([0.1, 0.6, 0.3])
    np.testing.assert_allclose(invest_isoelastic(1.0, 4.0, c, c), c)
    # sqrt(0.45) : sqrt(0.05) = 3 : 1
    np.testing.assert_allclose(invest_isoelastic(1.0, 2.0, [0.9, 0.1], [0.5, 0.5]), [0.75, 0.25])


def test_exponential_examples():
    np.testing.assert_allclose(invest_exponential(0.4, [0.25] * 4, [0.25] * 4), [0.1] * 4)
    r = invest_exponential(0.5, [0.8, 0.2], [0.5, 0.5])
    expected = 0.25 + 0.25 * np.log(4.0)
    np.testing.assert_allclose(r, [expected, 0.5 - expected])
    assert abs(r[0] - 0.5966) < 1e-4 and abs(r[1] + 0.0966) < 1e-4


def test_exponential_solves_its_first_order_conditions():
    # optimum of sum_k P_k U(r_k / c_k) with U = -exp(-x): P_k exp(-r_k/c_k) / c_k is the same for all k
    rng = np.random.default_rng(3)
    for _ in range(20):
        P, c = random_simplex(rng, 2, 5)
        r = invest_exponential(0.7, P, c)
        lam = P * np.exp(-r / c) / c
        np.testing.assert_allclose(lam, lam[0], rtol=1e-10)
        assert abs(r.sum() - 0.7) < 1e-12


@pytest.mark.parametrize(
    "fn, args",
    [
        (invest_isoelastic, (1.0, 2.0, [0.5, 0.5], [1.0, 0.0])),
        (invest_exponential, (1.0, [1.0, 0.0], [0.5, 0.5])),
        (invest_exponential, (1.0, [0.5, 0.5], [0.0, 1.0])),
    ],
)
def test_domain_errors(fn, args):
    with pytest.raises(DomainError):
        fn(*args)


def test_negative_wealth_rejected():
    with pytest.raises(ValidationError):
        invest_logarithmic(-1.0, [0.5, 0.5])


@given(seeds, st.integers(1, 8), st.floats(0.0, 5.0), st.floats(0.05, 20.0))
def test_budget_identity(seed, ng, W, eta):
    rng = np.random.default_rng(seed)
    P, c = random_simplex(rng, 2, ng)
    for u in (UtilitySpec.logarithmic(), UtilitySpec.isoelastic(eta), UtilitySpec.exponential()):
        assert abs(invest(u, W, P, c).sum() - W) <= 1e-10


@given(seeds, st.integers(2, 8), st.floats(1e-3, 1e3), st.floats(0.1, 15.0))
def test_isoelastic_linear_in_wealth(seed, ng, alpha, eta):
    rng = np.random.default_rng(seed)
    P, c = random_simplex(rng, 2, ng)
    base = invest_isoelastic(1.0, eta, P, c)
    np.testing.assert_allclose(invest_isoelastic(alpha, eta, P, c), alpha * base, rtol=1e-14)


@given(seeds, st.integers(2, 8), st.sampled_from([1 - 1e-8, 1 + 1e-8]))
def test_isoelastic_near_one_approaches_log(seed, ng, eta):
    rng = np.random.default_rng(seed)
    P, c = random_simplex(rng, 2, ng)
    np.testing.assert_allclose(invest_isoelastic(1.0, eta, P, c), P, atol=1e-6)


@given(seeds, st.integers(1, 8), st.floats(0.01, 3.0))
def test_generic_matches_closed_forms(seed, ng, W):
    rng = np.random.default_rng(seed)
    P, c = random_simplex(rng, 2, ng)
    for u in (UtilitySpec.logarithmic(), UtilitySpec.isoelastic(3.0), UtilitySpec.isoelastic(0.5), UtilitySpec.exponential()):
        r = invest_generic(marginal_utility_inverse(u), W, P, c)
        np.testing.assert_allclose(r, invest(u, W, P, c), atol=1e-10)


def test_generic_single_good():
    for u in (UtilitySpec.logarithmic(), UtilitySpec.isoelastic(7.0), UtilitySpec.exponential()):
        np.testing.assert_allclose(invest_generic(marginal_utility_inverse(u), 1.0, [1.0], [1.0]), [1.0])


def test_generic_reports_state_when_no_bracket():
    with pytest.raises(NonConvergenceError) as info:
        invest_generic(lambda y: np.full_like(y, 0.1), 1.0, [0.5, 0.5], [0.5, 0.5])
    assert isinstance(info.value.state, LagrangeSolveState)
