import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isingspec.kernels import (KernelContext, field_covariance,
                               field_covariance_grid, laplace_increment,
                               laplace_transform, oz_field_ratio,
                               oz_process_ratio, oz_transverse_ratios,
                               process_covariance, process_covariance_grid,
                               short_distance_ratio)
from isingspec.measures import MassSpectralMeasure, covariance_measure

from conftest import measure_to_tuples
from oracles import (field_cov_quad, increment_quad, laplace_quad,
                     process_cov_quad)


@pytest.fixture(scope="module", params=["unit_atom", "two_atoms",
                                        "atom_plus_piece", "scale_free"])
def any_measure(request):
    return request.getfixturevalue(request.param)


def test_field_cov_matches_quadrature(any_measure, rng):
    ctx = KernelContext(any_measure)
    atoms, pieces = measure_to_tuples(any_measure)
    for _ in range(6):
        s, y = rng.uniform(0.05, 3.0, size=2)
        ref = field_cov_quad(atoms, pieces, s, y)
        assert field_covariance(ctx, s, y) == pytest.approx(ref, rel=1e-9)


def test_process_cov_matches_quadrature(any_measure):
    ctx = KernelContext(any_measure)
    atoms, pieces = measure_to_tuples(any_measure)
    for s in (0.0, 0.3, 1.0, 4.0):
        ref = process_cov_quad(atoms, pieces, s)
        assert process_covariance(ctx, s) == pytest.approx(ref, rel=1e-9)


def test_field_cov_is_radial(two_atoms, rng):
    ctx = KernelContext(two_atoms)
    for _ in range(5):
        r = rng.uniform(0.1, 2.0)
        phi = rng.uniform(0.0, math.pi / 2.0)
        a = field_covariance(ctx, r * math.cos(phi), r * math.sin(phi))
        b = field_covariance(ctx, r, 0.0)
        assert a == pytest.approx(b, rel=1e-10)


def test_process_is_transverse_integral_of_field(atom_plus_piece):
    # K(s) = int H(s, y) dy, evaluated by direct quadrature on H.
    from scipy import integrate
    ctx = KernelContext(atom_plus_piece)
    s = 0.8
    val, _ = integrate.quad(lambda y: field_covariance(ctx, s, y),
                            -40.0, 40.0, limit=400, epsabs=1e-13,
                            epsrel=1e-11)
    assert process_covariance(ctx, s) == pytest.approx(val, rel=1e-8)


def test_laplace_transform_closed_forms():
    atom = MassSpectralMeasure(m1=2.0, atoms=[(2.0, 1.5)])
    assert laplace_transform(atom, 0.7) == pytest.approx(
        1.5 * math.exp(-1.4), rel=1e-12)
    piece = MassSpectralMeasure(m1=1.0, pieces=[(1.0, 2.0, 1.0, 0.0)])
    # int_1^2 e^{-ms} dm = (e^{-s} - e^{-2s})/s
    s = 0.9
    assert laplace_transform(piece, s) == pytest.approx(
        (math.exp(-s) - math.exp(-2.0 * s)) / s, rel=1e-10)


def test_laplace_increment_matches_quadrature(scale_free_rho):
    atoms, pieces = measure_to_tuples(scale_free_rho)
    for eps in (1e-2, 1e-4, 1e-6, 1e-8):
        ref = increment_quad(atoms, pieces, eps)
        assert laplace_increment(scale_free_rho, eps) == pytest.approx(
            ref, rel=1e-9)


def test_laplace_increment_tiny_eps_stable(scale_free_rho):
    # Down where naive quadrature of 1 - exp(-m eps) loses all digits the
    # increment must still follow the eps^{3/4} power law.
    e1 = laplace_increment(scale_free_rho, 1e-10)
    e2 = laplace_increment(scale_free_rho, 1e-12)
    slope = math.log(e1 / e2) / math.log(100.0)
    assert slope == pytest.approx(0.75, abs=1e-3)


def test_increment_diverges_for_heavy_tail():
    heavy = MassSpectralMeasure(m1=1.0, pieces=[(1.0, np.inf, 1.0, -0.5)])
    with pytest.raises(ValueError):
        laplace_increment(heavy, 1e-3)


def test_short_distance_ratio_trend(scale_free):
    ctx = KernelContext(scale_free)
    # Ratio [K(0)-K(eps)]/eps^{3/4} approaches Gamma(1/4)/(3/4) times the
    # reweighting amplitude pi.
    target = math.pi * math.gamma(0.25) / 0.75
    vals = [short_distance_ratio(ctx, eps) for eps in (1e-6, 1e-8, 1e-10)]
    devs = [abs(v - target) / target for v in vals]
    assert devs[-1] < 0.01
    assert devs[0] > devs[-1]


def test_oz_field_ratio_converges(unit_atom):
    ctx = KernelContext(unit_atom)
    limit = math.sqrt(math.pi / 2.0)
    d40 = abs(oz_field_ratio(ctx, 40.0) - limit) / limit
    d200 = abs(oz_field_ratio(ctx, 200.0) - limit) / limit
    assert d40 < 0.01
    assert d200 < d40


def test_oz_process_ratio_exact_for_atom(unit_atom):
    ctx = KernelContext(unit_atom)
    assert oz_process_ratio(ctx, 40.0) == pytest.approx(math.pi, abs=1e-10)


def test_oz_ratios_scale_with_mass():
    m = 2.5
    ctx = KernelContext(MassSpectralMeasure(m1=m, atoms=[(m, 1.0)]))
    assert oz_field_ratio(ctx, 100.0) == pytest.approx(
        math.sqrt(math.pi / (2.0 * m)), rel=2e-3)
    assert oz_process_ratio(ctx, 40.0) == pytest.approx(
        math.pi / m, abs=1e-10)


def test_transverse_ratios_converge():
    r1, r2 = oz_transverse_ratios(1.0, 1000.0)
    target = math.sqrt(math.pi / 2.0)
    assert r1 == pytest.approx(target, rel=0.02)
    assert r2 > 0.0


def test_grids_match_pointwise(two_atoms):
    ctx = KernelContext(two_atoms)
    svals = [0.2, 0.9, 1.7]
    yvals = [0.0, 0.4]
    rows = field_covariance_grid(ctx, svals, yvals)
    assert [(r[0], r[1]) for r in rows] == [(s, y) for s in svals
                                            for y in yvals]
    for s, y, val in rows:
        assert val == pytest.approx(field_covariance(ctx, s, y), rel=1e-12)
    krows = process_covariance_grid(ctx, svals)
    for s, val in krows:
        assert val == pytest.approx(process_covariance(ctx, s), rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(min_value=0.3, max_value=3.0),
       st.floats(min_value=0.1, max_value=5.0),
       st.floats(min_value=1.05, max_value=3.0))
def test_process_cov_is_decreasing_and_convex(mass, s, factor):
    ctx = KernelContext(MassSpectralMeasure(m1=mass, atoms=[(mass, 1.0)],
                                            pieces=[(mass, 4.0 * mass, 0.5,
                                                     -1.0)]))
    h = 0.05 * s
    k_m, k_0, k_p = (process_covariance(ctx, s + d) for d in (-h, 0.0, h))
    assert k_m > k_0 > process_covariance(ctx, s * factor + h)
    assert k_m + k_p - 2.0 * k_0 >= -1e-12 * k_0


def test_field_cov_positive_and_monotone(atom_plus_piece):
    ctx = KernelContext(atom_plus_piece)
    rs = np.linspace(0.1, 3.0, 12)
    vals = [field_covariance(ctx, r, 0.0) for r in rs]
    assert all(v > 0.0 for v in vals)
    assert all(a > b for a, b in zip(vals, vals[1:]))
