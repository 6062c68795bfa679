"""Stationary Gaussian process sampling driven by a decay-rate measure.

The centered process with covariance ``K(s) = integral exp(-m|s|) drho(m)``
is realized as a mixture of independent Ornstein-Uhlenbeck factors, one per
node of a quadrature discretization of ``rho``.  The one-step recursion

    ``U(t + dt) = exp(-m dt) U(t) + sqrt(1 - exp(-2 m dt)) xi``

is exact in distribution for every ``dt``, so sample paths carry no
time-discretization bias; the only approximation is the finite node set,
which is refined until the mixture covariance matches the target on a
check grid.

The measure here plays the covariance role directly (weights are variance
contributions); converting a spectral measure into this form is the
``covariance_measure`` reweighting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .kernels import KernelContext, laplace_increment, laplace_transform
from .measures import MassSpectralMeasure, first_moment

__all__ = [
    "GPSpec",
    "DiscreteMeasure",
    "PathSample",
    "CovRow",
    "RoughnessFit",
    "discretize_measure",
    "build_nodes",
    "sample_path",
    "sample_paths",
    "empirical_cov",
    "roughness_exponent",
    "analytic_roughness_exponent",
    "integrate_path",
    "integrated_variance",
]


class DiscreteMeasure(NamedTuple):
    """Nodes and weights approximating integrals of decaying Laplace kernels."""

    masses: np.ndarray
    weights: np.ndarray
    refinements: int

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())


@dataclass(frozen=True)
class GPSpec:
    """Sampling plan: covariance measure, uniform time grid, seed.

    ``nodes_per_piece`` is the initial Gauss-Legendre order used for each
    power-law piece (doubled until the mixture covariance agrees with the
    target within ``check_tol`` on the check grid, capped at ``max_nodes``
    total); ``rel_tail`` is the relative mass beyond which infinite tails
    are truncated.
    """

    rho: MassSpectralMeasure
    t0: float = 0.0
    dt: float = 0.01
    n: int = 1024
    seed: int = 0
    nodes_per_piece: int = 64
    rel_tail: float = 1e-12
    check_tol: float = 1e-4
    max_nodes: int = 4096

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ValueError("dt must be positive")
        if self.n < 2:
            raise ValueError("need at least 2 grid times")
        if self.nodes_per_piece < 2:
            raise ValueError("need at least 2 nodes per piece")
        if not (0 < self.rel_tail < 1e-3):
            raise ValueError("rel_tail must be a small positive fraction")
        if self.check_tol <= 0:
            raise ValueError("check_tol must be positive")
        if self.max_nodes < self.nodes_per_piece:
            raise ValueError("max_nodes below the initial order")
        for p in self.rho.pieces:
            if p.is_infinite and p.exponent >= -1.0:
                raise ValueError(
                    "covariance measure must have finite total mass; "
                    f"piece [{p.m_lo:g}, inf) with exponent {p.exponent:g} "
                    "does not")

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n)


@dataclass(frozen=True)
class PathSample:
    """One sampled path on the spec's time grid."""

    times: np.ndarray
    values: np.ndarray
    spec: GPSpec
    path_index: int = 0


class CovRow(NamedTuple):
    lag: float
    estimate: float
    stderr: float


class RoughnessFit(NamedTuple):
    """Log-log regression of the increment structure function.

    ``exponent`` is half the slope of ``log S(delta)`` against
    ``log delta``; its standard error is the scatter of per-path slopes.
    """

    exponent: float
    stderr: float
    slope: float
    intercept: float
    lags: np.ndarray
    structure: np.ndarray
    smooth_regime: bool


def _piece_nodes(amplitude: float, exponent: float, m_lo: float, m_hi: float,
                 n: int, rel_tail: float) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes in u = log m for one power-law piece."""
    q = exponent
    if math.isinf(m_hi):
        if q >= -1.0:
            raise ValueError(
                f"piece [{m_lo}, inf) with exponent {q} has infinite mass; "
                "it cannot back a stationary mixture"
            )
        # Truncate where the remaining closed-form tail mass is rel_tail
        # of the piece mass: (M / m_lo)^(q+1) = rel_tail.
        m_hi = m_lo * rel_tail ** (1.0 / (q + 1.0))
    u_lo, u_hi = math.log(m_lo), math.log(m_hi)
    x, w = np.polynomial.legendre.leggauss(n)
    half = 0.5 * (u_hi - u_lo)
    u = u_lo + half * (x + 1.0)
    masses = np.exp(u)
    weights = amplitude * np.exp((q + 1.0) * u) * (half * w)
    return masses, weights


def _assemble(measure: MassSpectralMeasure, n_per_piece: int,
              rel_tail: float) -> DiscreteMeasure:
    masses = [np.array([a.mass for a in measure.atoms], dtype=float)]
    weights = [np.array([a.weight for a in measure.atoms], dtype=float)]
    for p in measure.pieces:
        m, w = _piece_nodes(p.amplitude, p.exponent, p.m_lo, p.m_hi,
                            n_per_piece, rel_tail)
        masses.append(m)
        weights.append(w)
    m_all = np.concatenate(masses)
    w_all = np.concatenate(weights)
    order = np.argsort(m_all)
    return DiscreteMeasure(m_all[order], w_all[order], refinements=0)


def _default_check_grid(measure: MassSpectralMeasure) -> np.ndarray:
    scale = 1.0 / measure.m1
    return np.concatenate([[0.0], np.geomspace(0.01 * scale, 10.0 * scale, 13)])


def discretize_measure(measure: MassSpectralMeasure, nodes_per_piece: int = 64,
                       rel_tail: float = 1e-12, check_tol: float = 1e-4,
                       max_nodes: int = 4096,
                       check_grid: Optional[Sequence[float]] = None) -> DiscreteMeasure:
    """Build a node set whose Laplace transform matches the measure's.

    The measure must have finite total mass.  Power-law pieces get
    Gauss-Legendre nodes on a log-mass scale, doubled until
    ``sum w_k exp(-m_k s)`` agrees with the quadrature evaluation within
    ``check_tol`` (relative) at every ``s`` in the check grid.  Raises if
    agreement is not reached under the ``max_nodes`` cap.
    """
    if check_grid is None:
        check_grid = _default_check_grid(measure)
    check_grid = np.asarray(check_grid, dtype=float)
    ctx = KernelContext(measure)
    target = np.array([laplace_transform(measure, s, ctx) for s in check_grid])
    floor = max(target.max(), 1e-300)

    n = nodes_per_piece
    refinements = 0
    while True:
        nodes = _assemble(measure, n, rel_tail)
        approx = np.array([
            float(np.sum(nodes.weights * np.exp(-np.minimum(nodes.masses * s, 700.0))))
            for s in check_grid
        ])
        err = np.max(np.abs(approx - target) / floor)
        if err <= check_tol:
            return DiscreteMeasure(nodes.masses, nodes.weights, refinements)
        n_pieces = max(len(measure.pieces), 1)
        if n * 2 * n_pieces + len(measure.atoms) > max_nodes:
            raise RuntimeError(
                f"discretization stalled at {len(nodes.masses)} nodes with "
                f"relative covariance error {err:.3g} (tolerance {check_tol:g})"
            )
        n *= 2
        refinements += 1


def build_nodes(spec: GPSpec) -> DiscreteMeasure:
    """Discretize the spec's covariance measure with its own controls."""
    return discretize_measure(spec.rho, spec.nodes_per_piece, spec.rel_tail,
                              spec.check_tol, spec.max_nodes)


def sample_path(spec: GPSpec, path_index: int = 0,
                nodes: Optional[DiscreteMeasure] = None) -> PathSample:
    """Draw one stationary path on the spec's time grid.

    The generator key is ``(spec.seed, path_index)``, so paths are
    reproducible individually and mutually independent; identical inputs
    reproduce identical paths regardless of sampling order.
    """
    if path_index < 0:
        raise ValueError("path_index must be nonnegative")
    if nodes is None:
        nodes = build_nodes(spec)
    times = spec.times
    m = nodes.masses
    sqrt_w = np.sqrt(nodes.weights)
    rng = np.random.Generator(np.random.Philox(key=(spec.seed, path_index)))

    decay = np.exp(-np.minimum(m * spec.dt, 745.0))
    kick = np.sqrt(-np.expm1(-2.0 * np.minimum(m * spec.dt, 372.0)))
    state = rng.standard_normal(m.size)
    out = np.empty(times.size)
    out[0] = state @ sqrt_w
    for j in range(1, times.size):
        state = state * decay + rng.standard_normal(m.size) * kick
        out[j] = state @ sqrt_w
    return PathSample(times=times, values=out, spec=spec, path_index=path_index)


def sample_paths(spec: GPSpec, n_paths: int,
                 nodes: Optional[DiscreteMeasure] = None) -> list[PathSample]:
    """Independent paths with indices ``0 .. n_paths - 1``."""
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    if nodes is None:
        nodes = build_nodes(spec)
    return [sample_path(spec, k, nodes) for k in range(n_paths)]


def _common_grid(paths: Sequence[PathSample]) -> tuple[np.ndarray, float]:
    if not paths:
        raise ValueError("no paths given")
    t = paths[0].times
    for p in paths[1:]:
        if p.times.shape != t.shape or not np.array_equal(p.times, t):
            raise ValueError("paths do not share a time grid")
    return t, float(paths[0].spec.dt)


def empirical_cov(paths: Sequence[PathSample],
                  lags: Sequence[float]) -> list[CovRow]:
    """Covariance estimates at the given time lags, with cross-path errors.

    Each lag must be a whole number of grid steps.  Per path the product
    ``X(t) X(t + lag)`` is averaged over all admissible origins; the
    estimate is the mean of the per-path averages and the standard error
    their scatter over paths.  At least 100 paths are required for the
    error bars to mean anything.
    """
    if len(paths) < 100:
        raise ValueError(f"need at least 100 paths, got {len(paths)}")
    t, dt = _common_grid(paths)
    x = np.stack([p.values for p in paths])
    n_p = x.shape[0]
    rows = []
    for lag in lags:
        lag = float(lag)
        k = int(round(lag / dt))
        if abs(lag - k * dt) > 1e-9 * max(dt, abs(lag)):
            raise ValueError(f"lag {lag:g} is not a multiple of dt={dt:g}")
        if k < 0 or k >= t.size:
            raise ValueError(f"lag {lag:g} outside the grid span")
        if k == 0:
            per_path = np.mean(x * x, axis=1)
        else:
            per_path = np.mean(x[:, :-k] * x[:, k:], axis=1)
        rows.append(CovRow(lag=k * dt,
                           estimate=float(per_path.mean()),
                           stderr=float(per_path.std(ddof=1) / math.sqrt(n_p))))
    return rows


def roughness_exponent(paths: Sequence[PathSample],
                       deltas: Sequence[float]) -> RoughnessFit:
    """Path roughness from the increment structure function.

    ``S(delta) = mean (X(t+delta) - X(t))^2`` is computed at each delta
    (snapped to the nearest whole number of grid steps; the snapped set
    must keep at least 3 distinct lags spanning one and a half decades);
    half the slope of ``log S`` against ``log delta`` is the roughness
    exponent.  The standard error is the scatter of slopes fitted path by
    path.  When the covariance measure has a finite first
    moment the structure function is asymptotically linear in delta and
    the exponent saturates at one half; the fit is then returned with
    ``smooth_regime=True`` since a power-law reading of smaller lags does
    not apply.
    """
    t, dt = _common_grid(paths)
    deltas = np.asarray([float(d) for d in deltas])
    if deltas.min() < dt * (1.0 - 1e-9):
        raise ValueError("lags must not be below the grid step")
    ks = sorted({int(round(d / dt)) for d in deltas})
    if ks[-1] >= t.size:
        raise ValueError(f"lag {ks[-1] * dt:g} outside the grid span")
    if len(ks) < 3:
        raise ValueError("need at least 3 distinct lags for a roughness fit")
    if ks[-1] / ks[0] < 10.0 ** 1.5 * (1.0 - 1e-9):
        raise ValueError("lags must span at least 1.5 decades")
    x = np.stack([p.values for p in paths])
    lags = np.array([k * dt for k in ks])
    log_l = np.log(lags)
    per_path_s = np.stack([
        np.mean((x[:, k:] - x[:, :-k]) ** 2, axis=1) for k in ks
    ])  # (n_lags, n_paths)
    structure = per_path_s.mean(axis=1)
    if np.any(structure <= 0.0):
        raise ValueError("degenerate increments; cannot fit a roughness exponent")
    slope, intercept = np.polyfit(log_l, np.log(structure), 1)
    n_p = x.shape[0]
    if n_p >= 2 and np.all(per_path_s > 0.0):
        slopes = np.polyfit(log_l, np.log(per_path_s), 1)[0]
        stderr = 0.5 * float(np.std(slopes, ddof=1) / math.sqrt(n_p))
    else:
        stderr = float("nan")
    smooth = math.isfinite(first_moment(paths[0].spec.rho))
    return RoughnessFit(exponent=0.5 * float(slope), stderr=stderr,
                        slope=float(slope), intercept=float(intercept),
                        lags=lags, structure=structure, smooth_regime=smooth)


def analytic_roughness_exponent(rho: MassSpectralMeasure,
                                deltas: Sequence[float]) -> float:
    """Roughness exponent implied by the covariance itself.

    The structure function is ``2 (K(0) - K(delta))``, so regressing the
    log increment of the Laplace transform on ``log delta`` gives the same
    slope the sampled structure function estimates; half of it is returned
    for direct comparison with ``roughness_exponent``.
    """
    deltas = np.asarray([float(d) for d in deltas])
    if deltas.size < 2 or np.any(deltas <= 0.0):
        raise ValueError("need at least 2 positive lags")
    ctx = KernelContext(rho)
    inc = np.array([laplace_increment(rho, d, ctx) for d in deltas])
    if np.any(inc <= 0.0):
        raise ValueError("covariance increment vanished; no exponent to fit")
    slope = np.polyfit(np.log(deltas), np.log(inc), 1)[0]
    return 0.5 * float(slope)


def integrate_path(path: PathSample) -> np.ndarray:
    """Cumulative trapezoid integral of the path; zero at the first time."""
    return cumulative_trapezoid(path.values, path.times, initial=0.0)


def integrated_variance(nodes: DiscreteMeasure, horizon: float) -> float:
    """Exact variance of the path integral over ``[0, horizon]``.

    For one factor of rate ``m`` and weight ``w`` the integral has variance
    ``2 w (exp(-m T) - 1 + m T) / m^2``; factors are independent, so the
    mixture variance is the weighted sum.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    m = nodes.masses
    mt = m * horizon
    small = mt < 1e-4
    out = np.empty_like(m)
    # Series for small m T avoids cancellation: T^2 (1 - mT/3 + ...).
    out[small] = horizon * horizon * (1.0 - mt[small] / 3.0 + mt[small] ** 2 / 12.0)
    big = ~small
    out[big] = 2.0 * (np.exp(-np.minimum(mt[big], 700.0)) - 1.0 + mt[big]) / m[big] ** 2
    return float(np.sum(nodes.weights * out))
