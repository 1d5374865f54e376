import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stepfdr.core import (
    HypothesisSpace,
    PValueVector,
    RejectionSet,
    fdp,
    pi_volume,
    scaled_pvalues,
    weighted_pvalues,
)


def test_standard_space():
    sp = HypothesisSpace.standard(4)
    assert sp.labels == ("h1", "h2", "h3", "h4")
    assert np.all(sp.lam == 1) and np.all(sp.pi == 0.25)
    assert sp.is_standard and sp.total_volume == 4
    assert sp.pi_total == 1.0


@pytest.mark.parametrize(
    "lam, pi",
    [([1, 0], [0.5, 0.5]), ([1, -1], [0.5, 0.5]), ([1, math.inf], [0.5, 0.5]),
     ([1, 1], [0.5, 1.5]), ([1, 1], [-0.1, 0.5]), ([1], [0.5, 0.5])],
)
def test_space_rejects_invalid_weights(lam, pi):
    with pytest.raises(ValueError):
        HypothesisSpace(("a", "b"), lam, pi)


def test_space_rejects_duplicate_labels():
    with pytest.raises(ValueError):
        HypothesisSpace(("a", "a"), [1, 1], [0.5, 0.5])


def test_pvalue_vector_range():
    PValueVector([0, 0.5, 1])
    with pytest.raises(ValueError):
        PValueVector([0.1, 1.2])
    with pytest.raises(ValueError):
        PValueVector([np.nan])


@pytest.mark.parametrize("m", [1, 3, 7, 49, 100])
def test_weighted_pvalues_identity_under_uniform_weights(m):
    p = np.random.default_rng(m).random(m)
    assert np.array_equal(weighted_pvalues(p, HypothesisSpace.standard(m)), p)


def test_weighted_pvalues_zero_weight_conventions():
    sp = HypothesisSpace(("a", "b", "c"), [1, 1, 1], [0.0, 0.0, 0.5])
    wp = weighted_pvalues([0.3, 0.0, 0.3], sp)
    assert wp[0] == math.inf
    assert wp[1] == 0.0
    assert wp[2] == pytest.approx(0.2)


def test_weighted_pvalues_hand_example():
    sp = HypothesisSpace(("a", "b", "c", "d"), [1] * 4, [0.5, 0.25, 0.125, 0.125])
    wp = weighted_pvalues([0.1] * 4, sp)
    assert wp == pytest.approx([0.05, 0.1, 0.2, 0.2], abs=1e-15)


def test_weighted_pvalues_length_mismatch():
    with pytest.raises(ValueError, match="length mismatch"):
        weighted_pvalues([0.1, 0.2], HypothesisSpace.standard(3))


def test_scaled_pvalues():
    sp = HypothesisSpace(("a", "b"), [2, 1], [0.5, 0.0])
    assert list(scaled_pvalues([0.2, 0.1], sp)) == [0.4, math.inf]


def test_pi_volume_examples():
    sp = HypothesisSpace.standard(5)
    assert pi_volume(["h1", "h3"], sp) == pytest.approx(2 / 5)
    assert pi_volume([], sp) == 0.0
    sp2 = HypothesisSpace(("h1", "h2", "h3"), [2, 1, 1], [0.25, 0.25, 0.25])
    assert pi_volume({"h1", "h2"}, sp2) == pytest.approx(0.75, abs=1e-15)
    with pytest.raises(KeyError):
        pi_volume(["nope"], sp)


def test_pi_volume_density_totals_one():
    lam = np.array([3.0, 1.0, 2.0, 4.0])
    pi = np.array([1.0, 2.0, 0.5, 0.25]) / np.dot(lam, [1.0, 2.0, 0.5, 0.25])
    sp = HypothesisSpace(("a", "b", "c", "d"), lam, pi)
    assert pi_volume(sp.labels, sp) == pytest.approx(1.0, abs=1e-15)


def test_fdp_examples():
    sp = HypothesisSpace.standard(6)
    assert fdp(RejectionSet(np.zeros(6, bool), sp), ["h1"], sp) == 0.0
    assert fdp(["h1", "h2"], ["h1", "h2", "h3"], sp) == 1.0
    assert fdp(["h1", "h4", "h5", "h6"], ["h1", "h2"], sp) == 0.25


def test_fdp_uses_volume_weights():
    sp = HypothesisSpace(("a", "b"), [3, 1], [0.5, 0.5])
    assert fdp(["a", "b"], ["a"], sp) == 0.75


def test_rejection_set_volume_and_equality():
    sp = HypothesisSpace(("a", "b", "c"), [2, 1, 0.5], [0.2, 0.2, 0.2])
    r = RejectionSet.from_members(["a", "c"], sp)
    assert r.volume == 2.5
    assert r.members == frozenset({"a", "c"})
    assert r == RejectionSet(np.array([True, False, True]), sp)
    assert r != RejectionSet(np.array([True, True, True]), sp)


@st.composite
def spaces(draw, max_m=8):
    m = draw(st.integers(1, max_m))
    lam = draw(st.lists(st.integers(1, 5), min_size=m, max_size=m))
    pi = draw(st.lists(st.floats(0, 1), min_size=m, max_size=m))
    return HypothesisSpace(tuple(f"h{i}" for i in range(m)), lam, pi)


@given(spaces(), st.data())
def test_pi_volume_bounded_and_additive(sp, data):
    a = data.draw(st.lists(st.booleans(), min_size=sp.m, max_size=sp.m))
    a = np.array(a)
    va, vb = pi_volume(a, sp), pi_volume(~a, sp)
    assert 0 <= va <= sp.pi_total + 1e-12
    assert va + vb == pytest.approx(sp.pi_total, abs=1e-12)


@given(spaces(), st.data())
def test_fdp_monotone_in_added_false_rejections(sp, data):
    nulls = np.array(data.draw(st.lists(st.booleans(), min_size=sp.m, max_size=sp.m)))
    r = np.array(data.draw(st.lists(st.booleans(), min_size=sp.m, max_size=sp.m)))
    extra = nulls & ~r
    if extra.any():
        h = np.flatnonzero(extra)[0]
        r2 = r.copy()
        r2[h] = True
        assert fdp(r2, nulls, sp) >= fdp(r, nulls, sp) - 1e-15
    assert 0.0 <= fdp(r, nulls, sp) <= 1.0


@given(st.lists(st.floats(0, 1), min_size=2, max_size=10), st.floats(0.01, 1))
@settings(max_examples=50)
def test_weighted_pvalues_order_preserved_for_equal_pi(p, w):
    m = len(p)
    sp = HypothesisSpace(tuple(map(str, range(m))), np.ones(m), np.full(m, min(w, 1.0)))
    wp = weighted_pvalues(p, sp)
    for i in range(m):
        for j in range(m):
            if p[i] <= p[j]:
                assert wp[i] <= wp[j]
