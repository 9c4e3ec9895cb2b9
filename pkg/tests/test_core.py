import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mlmarkets.core import (
    Agent,
    Family,
    MarketInstance,
    UtilitySpec,
    as_utilities,
    clip_belief,
    is_simplex,
    normalize_simplex,
)
from mlmarkets.errors import DomainError, ValidationError


@pytest.mark.parametrize(
    "raw, expected",
    [((2, 2), (0.5, 0.5)), ((1, 0, 0), (1, 0, 0)), ((3, 1), (0.75, 0.25))],
)
def test_normalize_simplex_examples(raw, expected):
    np.testing.assert_allclose(normalize_simplex(raw), expected)


@pytest.mark.parametrize("raw", [(0, 0), (1, -1, 1), (np.nan, 1), ()])
def test_normalize_simplex_rejects(raw):
    with pytest.raises(ValidationError):
        normalize_simplex(raw)


def test_normalized_vectors_are_read_only():
    v = normalize_simplex([1, 3])
    with pytest.raises(ValueError):
        v[0] = 1.0


@given(arrays(np.float64, st.integers(1, 12), elements=st.floats(0, 1e6)))
def test_normalize_roundtrip(raw):
    if raw.sum() <= 0:
        return
    v = normalize_simplex(raw)
    assert is_simplex(v)
    np.testing.assert_allclose(normalize_simplex(v), v, atol=1e-15)


def test_clip_belief_noop():
    np.testing.assert_array_equal(clip_belief([0.5, 0.5], 1e-9), [0.5, 0.5])


def test_clip_belief_keeps_floor_after_renormalizing():
    # Naively flooring then dividing by the new sum would give (0.9901, 0.0099),
    # which breaks the floor; the floor is kept and mass is taken from the top.
    out = clip_belief([1.0, 0.0], 0.01)
    np.testing.assert_allclose(out, [0.99, 0.01])
    assert out.min() >= 0.01 and abs(out.sum() - 1) < 1e-15


def test_clip_belief_three_goods():
    out = clip_belief([0.0, 0.5, 0.5], 0.02)
    assert np.all(out >= 0.02) and abs(out.sum() - 1) < 1e-15
    np.testing.assert_allclose(out, [0.02, 0.49, 0.49])


@pytest.mark.parametrize("floor", [0.0, -1e-3, 0.5, 0.7])
def test_clip_belief_floor_range(floor):
    with pytest.raises(ValidationError):
        clip_belief([0.5, 0.5], floor)


@given(
    arrays(np.float64, st.integers(2, 10), elements=st.floats(0, 1)),
    st.floats(1e-12, 0.04),
)
def test_clip_belief_properties(raw, floor):
    if raw.sum() <= 0:
        return
    p = normalize_simplex(raw)
    out = clip_belief(p, floor)
    assert out.min() >= floor * (1 - 1e-12)
    assert abs(out.sum() - 1) <= 1e-12
    # entries already above the floor keep their order
    big = p > floor
    assert np.all(np.diff(out[big][np.argsort(p[big])]) >= -1e-15)


def test_clip_belief_rowwise():
    rows = np.array([[1.0, 0.0], [0.5, 0.5]])
    np.testing.assert_allclose(clip_belief(rows, 0.01), [[0.99, 0.01], [0.5, 0.5]])


def test_utility_spec_canonicalizes_eta_one():
    u = UtilitySpec.isoelastic(1.0)
    assert u.family is Family.LOGARITHMIC and u == UtilitySpec.logarithmic()
    assert UtilitySpec.from_dict(UtilitySpec.isoelastic(2.5).to_dict()) == UtilitySpec.isoelastic(2.5)


@pytest.mark.parametrize("eta", [0.0, -1.0, np.inf, np.nan])
def test_utility_spec_rejects_bad_eta(eta):
    with pytest.raises((ValidationError, DomainError)):
        UtilitySpec.isoelastic(eta)


def test_as_utilities_broadcasts():
    assert as_utilities(2.0, 3) == (UtilitySpec.isoelastic(2.0),) * 3
    assert as_utilities(UtilitySpec.exponential(), 2) == (UtilitySpec.exponential(),) * 2
    with pytest.raises(ValidationError):
        as_utilities([1.0, 2.0], 3)


@given(
    st.integers(1, 10),
    st.integers(2, 8),
    st.integers(0, 2**31),
)
def test_market_renormalizes_wealths(na, ng, seed):
    rng = np.random.default_rng(seed)
    w = rng.uniform(0, 5, size=na) + 1e-3
    m = MarketInstance(rng.dirichlet(np.ones(ng), size=na), w, UtilitySpec.logarithmic())
    assert abs(m.wealths.sum() - 1.0) <= 1e-12
    assert np.all(m.beliefs >= 1e-9)
    assert m.num_agents == na and m.num_goods == ng


def test_market_allows_zero_wealth_agents():
    m = MarketInstance([[0.5, 0.5], [0.9, 0.1]], [0.0, 1.0], UtilitySpec.logarithmic())
    np.testing.assert_array_equal(m.wealths, [0.0, 1.0])


def test_market_validation():
    with pytest.raises(ValidationError):
        MarketInstance([[0.5, 0.5]], [1.0, 1.0], UtilitySpec.logarithmic())
    with pytest.raises(ValidationError):
        MarketInstance([[0.5, 0.5]], [0.0], UtilitySpec.logarithmic())
    with pytest.raises(ValidationError):
        MarketInstance([[0.5, -0.5]], [1.0], UtilitySpec.logarithmic())


def test_market_from_agents_roundtrip():
    agents = [
        Agent("a", UtilitySpec.isoelastic(3.0), 2.0, [0.2, 0.8]),
        Agent("b", UtilitySpec.logarithmic(), 2.0, [0.6, 0.4]),
    ]
    m = MarketInstance.from_agents(agents)
    np.testing.assert_allclose(m.wealths, [0.5, 0.5])
    assert [a.id for a in m.agents] == ["a", "b"]
    assert not m.is_homogeneous()
