import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from isingspec.bessel import UnderflowWarning, bessel_k0, bessel_k0_scaled


def test_matches_scipy_across_the_range():
    xs = np.geomspace(1e-8, 600.0, 400)
    for x in xs:
        ref = special.k0(x)
        if ref > 0.0:
            assert bessel_k0(x) == pytest.approx(ref, rel=2e-13)


def test_scaled_variant_matches_scipy():
    xs = np.geomspace(1e-6, 5e4, 300)
    for x in xs:
        assert bessel_k0_scaled(x) == pytest.approx(special.k0e(x), rel=2e-13)


def test_small_argument_log_behavior():
    # K0(x) + log(x/2) + gamma -> 0 as x -> 0.
    x = 1e-10
    assert bessel_k0(x) == pytest.approx(-math.log(x / 2.0) - 0.5772156649015329,
                                         rel=1e-10)


def test_large_argument_asymptote():
    x = 400.0
    lead = math.sqrt(math.pi / (2.0 * x)) * math.exp(-x)
    assert bessel_k0(x) == pytest.approx(lead * (1.0 - 1.0 / (8.0 * x)),
                                         rel=1e-4)


def test_underflow_warns_and_returns_zero():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        with pytest.raises(UnderflowWarning):
            bessel_k0(800.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert bessel_k0(800.0) == 0.0


def test_domain_errors():
    for bad in (0.0, -1.0, math.nan):
        with pytest.raises(ValueError):
            bessel_k0(bad)


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=1e-6, max_value=500.0, allow_nan=False))
def test_positive_and_decreasing_property(x):
    v = bessel_k0(x)
    assert v > 0.0
    assert bessel_k0(x * (1.0 + 1e-6)) <= v


@settings(max_examples=100, deadline=None)
@given(st.floats(min_value=1e-4, max_value=100.0))
def test_scaled_consistency(x):
    assert bessel_k0(x) == pytest.approx(bessel_k0_scaled(x) * math.exp(-x),
                                         rel=1e-12)
