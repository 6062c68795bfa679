"""Covariance kernels generated by a mass spectral measure.

``field_covariance`` evaluates the planar field's covariance as a
superposition of ``K0`` Bessel kernels over the spectral measure;
``process_covariance`` evaluates the covariance of the line-averaged
process, the ``pi/m``-reweighted Laplace transform of the same measure.
The Ornstein-Zernike ratio helpers evaluate both kernels in scaled
arithmetic so the exponential factors never underflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

from scipy import integrate

from .bessel import bessel_k0, bessel_k0_scaled
from .measures import MassSpectralMeasure, Piece, covariance_measure

__all__ = [
    "KernelContext",
    "RadialPoint",
    "QuadratureError",
    "field_covariance",
    "process_covariance",
    "laplace_transform",
    "covariance_increment",
    "short_distance_ratio",
    "oz_field_ratio",
    "oz_process_ratio",
    "oz_transverse_ratios",
]


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance."""


@dataclass(frozen=True)
class RadialPoint:
    """Planar displacement ``(s, y)`` with its radius."""

    s: float
    y: float

    @property
    def r(self) -> float:
        return math.hypot(self.s, self.y)


@dataclass(frozen=True)
class KernelContext:
    """A spectral measure bundled with quadrature controls.

    ``rel_tol``/``abs_tol`` bound the error of every internal piece
    integral; ``limit`` caps adaptive subdivisions; ``tail_cutoff`` is the
    absolute threshold below which infinite-mass tails are truncated
    (defaults to a small fraction of ``abs_tol``).
    """

    measure: MassSpectralMeasure
    rel_tol: float = 1e-10
    abs_tol: float = 1e-14
    limit: int = 300
    tail_cutoff: float | None = None

    def __post_init__(self):
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("quadrature tolerances must be positive")
        if self.limit < 10:
            raise ValueError("subdivision limit too small")
        if self.tail_cutoff is None:
            object.__setattr__(self, "tail_cutoff", 0.01 * self.abs_tol)
        elif self.tail_cutoff <= 0:
            raise ValueError("tail_cutoff must be positive")

    @property
    def covariance(self) -> MassSpectralMeasure:
        return covariance_measure(self.measure)


def _quad(f: Callable[[float], float], a: float, b: float, ctx: KernelContext,
          rel: float | None = None) -> float:
    rel = ctx.rel_tol if rel is None else rel
    value, abserr, info, *rest = integrate.quad(
        f, a, b, epsabs=ctx.abs_tol, epsrel=rel, limit=ctx.limit, full_output=1
    )
    if rest:
        # quad appended an explanation string: the tolerance was not met.
        if abserr > 10.0 * max(ctx.abs_tol, rel * abs(value)):
            raise QuadratureError(
                f"quadrature on [{a:g}, {b:g}] reached error {abserr:g} "
                f"for value {value:g}: {rest[0]}"
            )
    return value


def _piece_k0_integral(piece: Piece, r: float, ctx: KernelContext) -> float:
    """``A * integral of m**p K0(m r) dm`` over the piece support."""
    p = piece.exponent
    # Truncate where the remaining tail (bounded via K0(z) <= sqrt(pi/2z) e^-z,
    # decreasing integrand envelope) is below the cutoff.
    x_lo = piece.m_lo * r
    if piece.is_infinite:
        x_hi = max(2.0 * x_lo, 40.0)
        scale = piece.amplitude * r ** (-(p + 1.0))

        def tail_bound(x: float) -> float:
            return abs(scale) * math.sqrt(math.pi / (2.0 * x)) * math.exp(-x) * x ** p * x * 2.0

        while x_hi < 1e9 and tail_bound(x_hi) > ctx.tail_cutoff:
            x_hi += 20.0
    else:
        x_hi = piece.m_hi * r

    u_lo = math.log(piece.m_lo)
    u_hi = math.log(x_hi / r) if piece.is_infinite else math.log(piece.m_hi)
    if u_hi <= u_lo:
        return 0.0

    def integrand(u: float) -> float:
        m = math.exp(u)
        z = m * r
        if z >= 745.0:
            return 0.0
        return math.exp((p + 1.0) * u) * bessel_k0(z)

    return piece.amplitude * _quad(integrand, u_lo, u_hi, ctx)


def _piece_exp_integral(piece: Piece, s: float, ctx: KernelContext) -> float:
    """``A * integral of m**p exp(-m s) dm`` over the piece support, ``s >= 0``."""
    from .measures import _power_piece_integral

    p = piece.exponent
    if s == 0.0:
        value = _power_piece_integral(piece, shift=0.0)
        if math.isinf(value):
            raise ValueError(
                f"piece [{piece.m_lo}, inf) with exponent {p} has divergent mass at s=0"
            )
        return value

    if piece.is_infinite:
        m_hi = max(2.0 * piece.m_lo, 45.0 / s)
        while m_hi < 1e12 / max(s, 1e-12) and (
            piece.amplitude * m_hi ** p * math.exp(-min(s * m_hi, 700.0)) * m_hi
            > ctx.tail_cutoff
        ):
            m_hi *= 1.4
    else:
        m_hi = piece.m_hi

    u_lo, u_hi = math.log(piece.m_lo), math.log(m_hi)
    if u_hi <= u_lo:
        return 0.0

    def integrand(u: float) -> float:
        m = math.exp(u)
        e = s * m
        if e >= 700.0:
            return 0.0
        return math.exp((p + 1.0) * u - e)

    return piece.amplitude * _quad(integrand, u_lo, u_hi, ctx)


def field_covariance(ctx: KernelContext, s: float, y: float = 0.0) -> float:
    """Covariance of the planar field at displacement ``(s, y)``.

    Radially symmetric: depends on the displacement only through
    ``r = hypot(s, y)``, which must be positive (the kernel diverges
    logarithmically at coincident points).
    """
    r = math.hypot(s, y)
    if not r > 0.0:
        raise ValueError("field covariance requires a non-zero displacement")
    total = 0.0
    for a in ctx.measure.atoms:
        z = a.mass * r
        total += a.weight * (bessel_k0(z) if z < 745.0 else 0.0)
    for p in ctx.measure.pieces:
        total += _piece_k0_integral(p, r, ctx)
    return total


def laplace_transform(measure: MassSpectralMeasure, s: float,
                      ctx: KernelContext | None = None) -> float:
    """Plain Laplace transform ``integral of exp(-m |s|)`` against the measure."""
    ctx = KernelContext(measure) if ctx is None else replace(ctx, measure=measure)
    s = abs(float(s))
    total = 0.0
    for a in measure.atoms:
        e = a.mass * s
        total += a.weight * (math.exp(-e) if e < 700.0 else 0.0)
    for p in measure.pieces:
        total += _piece_exp_integral(p, s, ctx)
    return total


def process_covariance(ctx: KernelContext, s: float) -> float:
    """Covariance of the line-averaged process at time separation ``s``.

    Equals ``pi * integral of exp(-m|s|)/m`` against the spectral measure,
    evaluated as the Laplace transform of the ``pi/m``-reweighted measure.
    Symmetric in ``s``; finite at ``s = 0``.
    """
    return laplace_transform(ctx.covariance, s, ctx)


def covariance_increment(ctx: KernelContext, eps: float) -> float:
    """``K(0) - K(eps)`` for the process covariance, evaluated without
    cancellation as a single integral of ``1 - exp(-m*eps)`` against the
    reweighted measure."""
    return laplace_increment(ctx.covariance, eps, ctx)


def laplace_increment(measure: MassSpectralMeasure, eps: float,
                      ctx: KernelContext | None = None) -> float:
    """Integral of ``1 - exp(-m*eps)`` against the measure.

    The short-time decrement of the Laplace transform, computed in one
    pass so nearly equal transforms never cancel.
    """
    if not eps > 0.0:
        raise ValueError("increment requires eps > 0")
    ctx = KernelContext(measure) if ctx is None else ctx
    rho = measure
    total = 0.0
    for a in rho.atoms:
        total += a.weight * (-math.expm1(-min(a.mass * eps, 700.0)))
    for p in rho.pieces:
        q = p.exponent
        if p.is_infinite:
            if q >= -1.0:
                raise ValueError(
                    "increment diverges: infinite piece with exponent >= -1")
            m_cut = 40.0 / eps
            if m_cut <= p.m_lo:
                # Entire piece is in the saturated region: 1 - exp(-m eps) ~ 1.
                total += p.amplitude * p.m_lo ** (q + 1.0) / (-(q + 1.0))
                continue
            u_lo, u_hi = math.log(p.m_lo), math.log(m_cut)

            def integrand(u: float) -> float:
                m = math.exp(u)
                return math.exp((q + 1.0) * u) * (-math.expm1(-m * eps))

            total += p.amplitude * _quad(integrand, u_lo, u_hi, ctx)
            # Beyond m_cut the exponential is dead: analytic power tail
            # (q < -1 for infinite pieces of a reweighted measure).
            total += p.amplitude * m_cut ** (q + 1.0) / (-(q + 1.0))
        else:
            u_lo, u_hi = math.log(p.m_lo), math.log(p.m_hi)

            def integrand(u: float) -> float:
                m = math.exp(u)
                return math.exp((q + 1.0) * u) * (-math.expm1(-min(m * eps, 700.0)))

            total += p.amplitude * _quad(integrand, u_lo, u_hi, ctx)
    return total


def short_distance_ratio(ctx: KernelContext, eps: float) -> float:
    """``(K(0) - K(eps)) / eps**0.75`` for the process covariance."""
    return covariance_increment(ctx, eps) / eps ** 0.75


def _require_isolated_lowest_atom(measure: MassSpectralMeasure) -> float:
    atom = measure.atom_at(measure.m1)
    if atom is None:
        raise ValueError(
            f"asymptotic ratio requires an atom at m1={measure.m1}; none present"
        )
    gap = measure.spectral_gap_above_m1()
    if not gap > 0.0:
        offender = next(
            (p for p in measure.pieces if p.m_lo <= measure.m1 * (1 + 1e-12)), None
        )
        raise ValueError(
            "asymptotic ratio requires an upper spectral gap above m1; "
            f"piece {offender} starts at the bottom of the support"
        )
    return atom.weight


def oz_field_ratio(ctx: KernelContext, t: float) -> float:
    """``H(t) / (t**-0.5 * exp(-m1 t))`` in scaled arithmetic.

    Requires an isolated atom at the bottom of the mass support.  The
    large-``t`` limit is ``w1 * sqrt(pi / (2 m1))`` for bottom-atom weight
    ``w1``.
    """
    if not t > 0.0:
        raise ValueError("ratio requires t > 0")
    _require_isolated_lowest_atom(ctx.measure)
    m1 = ctx.measure.m1
    sqrt_t = math.sqrt(t)
    total = 0.0
    for a in ctx.measure.atoms:
        shift = (a.mass - m1) * t
        if shift < 700.0:
            total += a.weight * bessel_k0_scaled(a.mass * t) * math.exp(-shift) * sqrt_t
    for p in ctx.measure.pieces:
        m_hi = min(p.m_hi, p.m_lo + 60.0 / t)

        def integrand(m: float, p=p) -> float:
            shift = (m - m1) * t
            if shift >= 700.0:
                return 0.0
            return m ** p.exponent * bessel_k0_scaled(m * t) * math.exp(-shift)

        total += p.amplitude * _quad(integrand, p.m_lo, m_hi, ctx) * sqrt_t
    return total


def oz_process_ratio(ctx: KernelContext, t: float) -> float:
    """``K(t) / exp(-m1 t)`` in scaled arithmetic.

    Under an isolated bottom atom of weight ``w1`` the large-``t`` limit is
    ``pi * w1 / m1``.
    """
    if not t > 0.0:
        raise ValueError("ratio requires t > 0")
    _require_isolated_lowest_atom(ctx.measure)
    m1 = ctx.measure.m1
    total = 0.0
    for a in ctx.measure.atoms:
        shift = (a.mass - m1) * t
        if shift < 700.0:
            total += math.pi * a.weight / a.mass * math.exp(-shift)
    for p in ctx.measure.pieces:
        m_hi = min(p.m_hi, p.m_lo + 60.0 / t)

        def integrand(m: float) -> float:
            shift = (m - m1) * t
            if shift >= 700.0:
                return 0.0
            return m ** (p.exponent - 1.0) * math.exp(-shift)

        total += math.pi * p.amplitude * _quad(integrand, p.m_lo, m_hi, ctx)
    return total


def oz_transverse_ratios(m: float, t: float, alpha: float = 0.7, beta: float = 0.3,
                         ctx: KernelContext | None = None) -> tuple[float, float]:
    """Transverse-profile ratios converging to ``sqrt(pi / (2 m))``.

    Returns the pair

    * ``integral of (u^2+t^2)^(-1/4) exp(-m sqrt(u^2+t^2)) du / exp(-m t)``
      over ``[0, inf)``, and
    * ``integral of exp(-m sqrt(u^2+t^2)) du / (sqrt(t) exp(-m t))`` over
      the window ``[t**beta, t**alpha]``,

    both evaluated with the exponential prefactor folded into the integrand
    so nothing underflows.  Requires ``0 < beta < 1/2 < alpha < 3/4`` and
    ``t`` large enough that the window is non-degenerate.
    """
    if not (0.0 < beta < 0.5 < alpha < 0.75):
        raise ValueError(f"need 0 < beta < 1/2 < alpha < 3/4, got alpha={alpha}, beta={beta}")
    if not (t > 1.0 and t ** beta < t ** alpha):
        raise ValueError(f"t={t} does not give a non-degenerate window")
    if not m > 0.0:
        raise ValueError("mass must be positive")
    if ctx is None:
        ctx = KernelContext(MassSpectralMeasure(atoms=[(m, 1.0)]), rel_tol=1e-11)

    def folded_exp(u: float) -> float:
        # exp(-m (sqrt(u^2+t^2) - t)), with the difference formed stably.
        d = u * u / (math.hypot(u, t) + t)
        return math.exp(-m * d) if m * d < 700.0 else 0.0

    u_max = 1.3 * math.sqrt(80.0 * t / m + 1600.0 / (m * m))
    r1 = _quad(lambda u: (u * u + t * t) ** -0.25 * folded_exp(u), 0.0, u_max, ctx)
    r2 = _quad(folded_exp, t ** beta, min(t ** alpha, u_max), ctx) / math.sqrt(t)
    return r1, r2


# -- grid helpers (CLI) -----------------------------------------------------


def field_covariance_grid(ctx: KernelContext, s_values: Sequence[float],
                          y_values: Sequence[float]):
    """Rows ``(s, y, H)`` over the Cartesian grid."""
    rows = []
    for s in s_values:
        for y in y_values:
            rows.append((float(s), float(y), field_covariance(ctx, s, y)))
    return rows


def process_covariance_grid(ctx: KernelContext, s_values: Sequence[float]):
    """Rows ``(s, K)`` over the grid."""
    return [(float(s), process_covariance(ctx, s)) for s in s_values]
