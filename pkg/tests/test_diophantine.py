import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multihomog.diophantine import (RationalApproximation, approx_with_integer_parts, search_bound,
                                    simultaneous_approx, verify_approx)
from multihomog.errors import CapExceeded, DimensionMismatch, InvalidInput


def brute_force(alphas, Q):
    """Smallest q with max |a - round(q a)/q| < 1/(qQ), by direct scan."""
    for q in range(1, 10**6):
        if all(abs(a - round(q * a) / q) < 1 / (q * Q) for a in alphas):
            return q
    raise AssertionError("no q found")


def test_two_scale_example():
    a = simultaneous_approx([1 / 3 + 0.01], 30)
    assert a.q == 3 and a.p == (1,)
    assert a.gamma[0] == pytest.approx(0.01, abs=1e-15)
    assert a.s == (1,)


def test_integers_need_no_denominator():
    a = simultaneous_approx([0.0, 1.0], 100)
    assert a.q == 1 and a.p == (0, 1) and a.gamma == (0.0, 0.0) and a.s == (0, 0)


def test_sqrt2_minus_one():
    a = simultaneous_approx([math.sqrt(2) - 1], 10)
    assert a.q == 5 and a.p == (2,)
    assert a.gamma[0] == pytest.approx(abs(math.sqrt(2) - 1 - 0.4), rel=1e-12)
    assert brute_force([math.sqrt(2) - 1], 10) == 5


def test_verify_examples():
    alphas = [math.sqrt(3) / 2, 0.123]
    a = simultaneous_approx(alphas, 7)
    assert verify_approx(a, alphas, 7).ok
    bad = RationalApproximation(q=3, p=(1,), gamma=(abs(0.5 - 1 / 3),), s=(1,), Q=10)
    cert = verify_approx(bad, [0.5], 10)
    assert not cert.ok and cert.worst >= 1
    zero = RationalApproximation(q=1, p=(0,), gamma=(0.0,), s=(0,), Q=1e6)
    assert verify_approx(zero, [0.0], 1e6).ok


def test_contract_errors():
    with pytest.raises(InvalidInput):
        simultaneous_approx([1.5], 10)
    with pytest.raises(InvalidInput):
        simultaneous_approx([0.5], 1.0)
    with pytest.raises(CapExceeded):
        simultaneous_approx([0.1, 0.2, 0.3], 1000, cap=10**6)
    a = simultaneous_approx([0.25], 3)
    with pytest.raises(DimensionMismatch):
        verify_approx(a, [0.25, 0.5], 3)


def test_search_bound():
    assert search_bound(10, 2) == 100
    assert search_bound(2.5, 2) == 7


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=3), st.floats(2, 20))
def test_dirichlet_guarantee_and_minimality(alphas, Q):
    a = simultaneous_approx(alphas, Q)
    assert verify_approx(a, alphas, Q).ok
    assert a.q < Q ** len(alphas) + 1
    assert max(a.gamma) < 1 / (a.q * Q)
    assert all(0 <= p <= a.q for p in a.p)
    # minimality: no smaller denominator meets the bound
    arr = np.asarray(alphas)
    for q in range(1, a.q):
        assert np.max(np.abs(arr - np.rint(q * arr) / q)) >= 1 / (q * Q)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=2), st.floats(2, 30))
def test_deterministic(alphas, Q):
    assert simultaneous_approx(alphas, Q) == simultaneous_approx(alphas, Q)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 40), min_size=1, max_size=2), st.floats(2, 15))
def test_integer_parts_keep_residuals(ratios, Q):
    a = approx_with_integer_parts(ratios, Q)
    for r, p, g in zip(ratios, a.p, a.gamma):
        assert abs(r - p / a.q) == pytest.approx(g, abs=1e-9)
        assert g < 1 / (a.q * Q)
