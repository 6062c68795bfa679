"""Independent reference implementations used to freeze expected values.

Everything here is computed with scipy/numpy primitives only, never with
the package's own numerics, so each comparison in the tests keeps one
side independent of the code under test.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate, special

CRITICAL_BETA_J = 0.5 * math.log(1.0 + math.sqrt(2.0))


# --------------------------------------------------------------------------
# Spectral kernels by direct quadrature


def _piece_quad(func, m_lo, m_hi, decay_rate):
    """Integrate func over [m_lo, m_hi] with an explicit truncation.

    For infinite upper limits the integrand must decay like exp(-m*rate);
    the domain is cut where the exponential factor reaches 5e-324 territory
    and scipy handles the rest adaptively.
    """
    if math.isinf(m_hi):
        if decay_rate <= 0.0:
            raise ValueError("infinite piece needs positive decay")
        m_hi = m_lo + 750.0 / decay_rate
    val, _ = integrate.quad(func, m_lo, m_hi, limit=400, epsabs=1e-14,
                            epsrel=1e-12)
    return val


def field_cov_quad(atoms, pieces, s, y):
    """H(s,y) = sum_i w_i K0(m_i r) + sum_j int A m^p K0(m r) dm."""
    r = math.hypot(s, y)
    if r <= 0.0:
        raise ValueError("field covariance diverges at the origin")
    total = sum(w * special.k0(m * r) for m, w in atoms)
    for m_lo, m_hi, amp, p in pieces:
        total += _piece_quad(lambda m: amp * m ** p * special.k0(m * r),
                             m_lo, m_hi, r)
    return total


def process_cov_quad(atoms, pieces, s):
    """K(s) with the pi/m reweighting applied to a spectral measure."""
    total = sum(math.pi * (w / m) * math.exp(-m * s) for m, w in atoms)
    for m_lo, m_hi, amp, p in pieces:
        if s == 0.0:
            total += math.pi * _piece_moment(m_lo, m_hi, amp, p - 1.0)
        else:
            total += _piece_quad(
                lambda m: math.pi * amp * m ** (p - 1.0) * math.exp(-m * s),
                m_lo, m_hi, s)
    return total


def laplace_quad(atoms, pieces, s):
    """Plain Laplace transform of a covariance-form measure."""
    total = sum(w * math.exp(-m * s) for m, w in atoms)
    for m_lo, m_hi, amp, p in pieces:
        if s == 0.0:
            total += _piece_moment(m_lo, m_hi, amp, p)
        else:
            total += _piece_quad(lambda m: amp * m ** p * math.exp(-m * s),
                                 m_lo, m_hi, s)
    return total


def _piece_moment(m_lo, m_hi, amp, p):
    """Closed-form integral of amp * m**p over the support."""
    if math.isinf(m_hi):
        if p >= -1.0:
            return math.inf
        return -amp * m_lo ** (p + 1.0) / (p + 1.0)
    if p == -1.0:
        return amp * math.log(m_hi / m_lo)
    return amp * (m_hi ** (p + 1.0) - m_lo ** (p + 1.0)) / (p + 1.0)


def increment_quad(atoms, pieces, eps):
    """int (1 - exp(-m eps)) d(measure), measure in covariance form.

    Uses the substitution m = u/eps so the integrand is order-one on a
    fixed domain; safe down to eps ~ 1e-12 for the measures in the tests.
    """
    total = sum(w * -math.expm1(-m * eps) for m, w in atoms)
    u_cut = 50.0  # 1 - exp(-u) is 1 to double precision beyond here
    for m_lo, m_hi, amp, p in pieces:
        u_lo = m_lo * eps
        u_hi = math.inf if math.isinf(m_hi) else m_hi * eps

        def g(u):
            return amp * (u / eps) ** p * -math.expm1(-u) / eps

        val, _ = integrate.quad(g, u_lo, min(u_hi, u_cut), limit=400,
                                epsabs=0.0, epsrel=1e-12,
                                points=[min(1.0, u_hi)] if u_lo < 1.0 < u_hi
                                else None)
        total += val
        if u_hi > u_cut:
            # The factor 1 - exp(-m eps) is exactly 1 out here; what is
            # left is the plain power tail of the measure.
            total += _piece_moment(u_cut / eps, m_hi, amp, p)
    return total


def short_distance_constant():
    """Limit of [K(0)-K(eps)] / eps^{3/4} for d(rho) = m^{-7/4} dm on [1,inf).

    Substituting m*eps = u gives eps^{3/4} * int u^{-7/4}(1-e^{-u}) du over
    [eps, inf); the eps -> 0 limit is Gamma(1/4)/(3/4) by parts.
    """
    return math.gamma(0.25) / 0.75


# --------------------------------------------------------------------------
# Exact Ising enumeration (brute force over all states)


def enumerate_ising(n, beta_j=CRITICAL_BETA_J, h_lat=0.0,
                    displacements=((1, 0), (0, 1))):
    """Exact moments of the n-by-n periodic Ising model, n <= 4.

    Returns a dict with keys 'm', 'm2', 'm4' (magnetization moments) and
    ('corr', dx, dy) entries (site-averaged two-point values).
    """
    nn = n * n
    if nn > 16:
        raise ValueError("enumeration is for n*n <= 16")
    states = np.arange(2 ** nn, dtype=np.uint32)
    bits = ((states[:, None] >> np.arange(nn, dtype=np.uint32)) & 1)
    lat = (2 * bits.astype(np.int8) - 1).reshape(-1, n, n)
    bond = ((lat * np.roll(lat, -1, axis=1)).sum(axis=(1, 2))
            + (lat * np.roll(lat, -1, axis=2)).sum(axis=(1, 2)))
    m_tot = lat.sum(axis=(1, 2))
    logw = beta_j * bond.astype(float) + h_lat * m_tot.astype(float)
    logw -= logw.max()
    w = np.exp(logw)
    w /= w.sum()
    m = m_tot.astype(float) / nn
    out = {
        "m": float(w @ m),
        "m2": float(w @ m ** 2),
        "m4": float(w @ m ** 4),
    }
    for dx, dy in displacements:
        prod = (lat * np.roll(np.roll(lat, -dx, axis=1), -dy, axis=2))
        out[("corr", dx, dy)] = float(w @ (prod.mean(axis=(1, 2))
                                           .astype(float)))
    return out


# --------------------------------------------------------------------------
# Gaussian-process references


def ou_cov(mass, weight, lag):
    """Stationary covariance of a weighted exponential component."""
    return weight * math.exp(-mass * abs(lag))


def integrated_ou_var(mass, weight, horizon):
    """Variance of the time integral of one OU component over [0, T]."""
    mt = mass * horizon
    return weight * 2.0 * (math.exp(-mt) - 1.0 + mt) / mass ** 2


def multi_exp(times, masses, weights):
    """Plain sum of decaying exponentials."""
    t = np.asarray(times, dtype=float)
    out = np.zeros_like(t)
    for m, w in zip(masses, weights):
        out += w * np.exp(-m * t)
    return out
