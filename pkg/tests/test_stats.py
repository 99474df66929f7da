import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from oracles import chi2_sf_oracle, normal_sf_oracle
from somtest.stats import NullDescriptor, chi2_sf, normal_sf, permutation_pvalue

# frozen from oracles.chi2_sf_oracle / oracles.normal_sf_oracle
CHI2_SF_20_1 = 7.744216431044084e-06
NORMAL_SF_196 = 0.02499789514822065
NORMAL_SF_2 = 0.022750131948179264


@pytest.mark.parametrize("dof", [1, 2, 7, 99])
def test_chi2_sf_at_zero(dof):
    assert chi2_sf(0, dof) == 1.0


def test_chi2_sf_dof2_closed_form():
    assert_allclose(chi2_sf(2 * math.log(2), 2), 0.5, atol=1e-12)


def test_chi2_sf_frozen_value():
    assert abs(chi2_sf(20, 1) - CHI2_SF_20_1) <= 1e-10


@pytest.mark.parametrize("x,dof", [(0.5, 1), (3.0, 4), (12.0, 5), (99.0, 99), (150.0, 80), (1e-3, 30)])
def test_chi2_sf_matches_oracle(x, dof):
    assert abs(chi2_sf(x, dof) - chi2_sf_oracle(x, dof)) <= 1e-10


def test_chi2_sf_rejects_bad_input():
    with pytest.raises(ValueError):
        chi2_sf(-1.0, 3)
    with pytest.raises(ValueError):
        chi2_sf(1.0, 0)
    with pytest.raises(ValueError):
        chi2_sf(float("nan"), 3)


@given(st.floats(0, 200), st.floats(0.01, 50), st.integers(1, 120))
def test_chi2_sf_strictly_decreasing(x, gap, dof):
    lo, hi = chi2_sf(x, dof), chi2_sf(x + gap, dof)
    assert hi <= lo
    if lo > 1e-300 and lo < 1:
        assert hi < lo


@pytest.mark.parametrize("x", [1.0, 5.0, 10.0])
def test_chi2_sf_agrees_with_monte_carlo(x):
    dof = 4
    draws = np.random.default_rng(1234).chisquare(dof, 1_000_000)
    p_hat = np.mean(draws >= x)
    se = math.sqrt(p_hat * (1 - p_hat) / draws.size)
    assert abs(chi2_sf(x, dof) - p_hat) <= 3 * se


def test_normal_sf_values():
    assert normal_sf(0.0) == 0.5
    assert abs(normal_sf(1.96) - NORMAL_SF_196) <= 1e-12
    assert abs(normal_sf(2.0) - NORMAL_SF_2) <= 1e-12


@given(st.floats(-8, 8))
def test_normal_sf_symmetry(z):
    assert abs(normal_sf(-z) - (1 - normal_sf(z))) <= 1e-12


@given(st.floats(-12, 12))
def test_normal_sf_matches_oracle(z):
    assert abs(normal_sf(z) - normal_sf_oracle(z)) <= 1e-12


def test_normal_sf_rejects_non_finite():
    with pytest.raises(ValueError):
        normal_sf(float("inf"))


def test_permutation_pvalue_examples():
    assert permutation_pvalue(100.0, np.arange(99)) == 1 / 100
    assert permutation_pvalue(-1.0, np.arange(5)) == 1.0
    assert permutation_pvalue(5.0, np.arange(1, 11)) == 7 / 11


def test_permutation_pvalue_empty():
    with pytest.raises(ValueError):
        permutation_pvalue(1.0, [])


@settings(max_examples=50)
@given(st.lists(st.integers(-20, 20), min_size=1, max_size=40), st.integers(-20, 20), st.randoms())
def test_permutation_pvalue_order_invariant_and_positive(values, observed, rnd):
    shuffled = list(values)
    rnd.shuffle(shuffled)
    p = permutation_pvalue(observed, values)
    assert p == permutation_pvalue(observed, shuffled)
    assert 0 < p <= 1


def test_null_descriptor_round_trip():
    for null in (NullDescriptor.chi_squared(3), NullDescriptor.normal(0.5, 0.01),
                 NullDescriptor.permutation([1, 2, 3])):
        assert NullDescriptor.from_dict(null.to_dict()) == null


def test_null_descriptor_invariants():
    with pytest.raises(ValueError):
        NullDescriptor.chi_squared(0)
    with pytest.raises(ValueError):
        NullDescriptor.normal(0, 0)
    with pytest.raises(ValueError):
        NullDescriptor.permutation([])
