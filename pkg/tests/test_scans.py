"""Tests for the field-strength exponent scans."""

import math

import numpy as np
import pytest

from isingspec.scans import (
    critical_isotherm_scan,
    effective_mass_profile,
    mass_gap_scan,
)


def _two_image_correlator(m, n):
    x = np.arange(n // 2 + 1)
    return np.exp(-m * x) + np.exp(-m * (n - x))


def test_effective_mass_recovers_pure_decay():
    n = 32
    corr = _two_image_correlator(0.35, n)
    prof = effective_mass_profile(corr, n)
    good = prof[np.isfinite(prof)]
    assert good.size >= 10
    assert good == pytest.approx(np.full(good.size, 0.35), abs=1e-9)


def test_effective_mass_steep_decay_is_stable():
    # Steep decay near the half-torus used to underflow both images and
    # divide zero by zero inside the bracket check.
    n = 128
    corr = _two_image_correlator(2.0, n)
    prof = effective_mass_profile(corr, n)
    good = prof[np.isfinite(prof)]
    assert good.size > 0
    assert good == pytest.approx(np.full(good.size, 2.0), abs=1e-6)


def test_effective_mass_marks_unsolvable_entries():
    n = 16
    corr = _two_image_correlator(0.5, n)
    corr[4] = corr[3] * 1.5
    prof = effective_mass_profile(corr, n)
    assert math.isnan(prof[3])
    corr2 = _two_image_correlator(0.5, n)
    corr2[5] = -corr2[5]
    prof2 = effective_mass_profile(corr2, n)
    assert math.isnan(prof2[4])
    assert math.isnan(prof2[5])


@pytest.mark.parametrize("scan", [critical_isotherm_scan, mass_gap_scan])
def test_scan_h_list_validation(scan):
    with pytest.raises(ValueError, match="at least 3"):
        scan(n=8, h_list=[1.0, 10.0], mc_budget=10, seed=1)
    with pytest.raises(ValueError, match="at least one decade"):
        scan(n=8, h_list=[1.0, 2.0, 4.0], mc_budget=10, seed=1)
    with pytest.raises(ValueError, match="positive"):
        scan(n=8, h_list=[-1.0, 1.0, 10.0], mc_budget=10, seed=1)


@pytest.mark.mc
def test_isotherm_scan_smoke():
    fit = critical_isotherm_scan(n=16, h_list=[80.0, 25.0, 7.0],
                                 mc_budget=120, seed=42)
    assert len(fit.points) == 3
    hs = [p.h for p in fit.points]
    assert hs == sorted(hs)
    assert all(p.magnetization > 0 for p in fit.points)
    assert all(p.stderr > 0 for p in fit.points)
    assert math.isfinite(fit.exponent)
    assert fit.exponent > 0
    assert fit.amplitude > 0


@pytest.mark.mc
def test_isotherm_scan_flags_finite_size_contamination():
    fit = critical_isotherm_scan(n=8, h_list=[0.5, 1.5, 6.0],
                                 mc_budget=60, seed=7)
    assert "finite-size contaminated" in fit.flags
    low = fit.points[0]
    assert "finite-size contaminated" in low.flags


@pytest.mark.mc
def test_mass_gap_scan_smoke():
    fit = mass_gap_scan(n=16, h_list=[45.0, 12.0, 4.0],
                        mc_budget=240, seed=5)
    assert len(fit.points) == 3
    assert all(p.mass > 0 for p in fit.points)
    assert all(p.window[0] < p.window[1] for p in fit.points)
    assert math.isfinite(fit.exponent)
