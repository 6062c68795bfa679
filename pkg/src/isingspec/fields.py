"""Renormalized magnetization field built from spin configurations.

The lattice field pairs a test function f with a configuration as
``a**(15/8) * sum f(a x) s_x``.  Test functions are separable in the two
axes (axis 0 is the time direction t, axis 1 the transverse direction y),
so every pairing reduces to a row-weight/column-weight double contraction.
On top of the pairings sit the transverse strip averages with Gaussian
time mollification, empirical covariance tables for the field and for the
transversely integrated process, the susceptibility quadratic form, and
moment-based normality diagnostics for the strip averages.

Coordinates are torus-centered: site index i maps to position
``a * wrap(i)`` with ``wrap`` the symmetric minimal image, so test
functions sit near the origin and reflections are exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .chains import integrated_autocorr_time
from .lattice import LatticeSpec, SpinConfiguration

__all__ = [
    "BlockIndicator",
    "StripMollifier",
    "GaussianTime",
    "FieldSample",
    "LineAverageSamples",
    "FieldCovarianceEstimate",
    "SyntheticCovarianceTable",
    "ProcessCovarianceRow",
    "CltRow",
    "SusceptibilityResult",
    "pair_field",
    "pair_field_values",
    "line_average_samples",
    "line_average_matrix",
    "estimate_field_covariance",
    "estimate_process_covariance",
    "susceptibility",
    "clt_diagnostics",
]

_RENORM_POWER = 15.0 / 8.0
_UNDER_RESOLVED_FACTOR = 2.0
_GAUSSIAN_SUPPORT_SIGMAS = 6.0


def _centered_positions(n: int, a: float) -> np.ndarray:
    idx = np.arange(n)
    wrapped = (idx + n // 2) % n - n // 2
    return a * wrapped


def _wrap_displacement(d: np.ndarray, period: float) -> np.ndarray:
    return d - period * np.round(d / period)


def _gaussian_weights(n: int, a: float, center: float, variance: float) -> np.ndarray:
    """Density of N(center, variance) at the site positions, minimal image."""
    pos = _centered_positions(n, a)
    d = _wrap_displacement(pos - center, n * a)
    return np.exp(-d * d / (2.0 * variance)) / math.sqrt(2.0 * math.pi * variance)


def _interval_mask(n: int, a: float, center: float, lo: float, hi: float,
                   closed: bool) -> np.ndarray:
    pos = _centered_positions(n, a)
    d = _wrap_displacement(pos - center, n * a)
    if closed:
        return (d >= lo - 1e-12 * a) & (d <= hi + 1e-12 * a)
    return (d >= lo - 1e-12 * a) & (d < hi - 1e-12 * a)


@dataclass(frozen=True)
class BlockIndicator:
    """Normalized square block: ``side**-2`` on a square, zero outside.

    The normalization makes the pairing an empirical field density at
    scale ``side``; over aligned spins it approaches ``a**(-1/8)`` as the
    spacing shrinks.
    """

    center: tuple[float, float] = (0.0, 0.0)
    side: float = 1.0

    def weights(self, spec: LatticeSpec) -> tuple[np.ndarray, np.ndarray]:
        if self.side <= 0.0:
            raise ValueError("block side must be positive")
        if self.side > spec.n * spec.a:
            raise ValueError("block does not fit inside the torus")
        half = 0.5 * self.side
        wt = _interval_mask(spec.n, spec.a, self.center[0], -half, half,
                            closed=False).astype(float) / self.side
        wy = _interval_mask(spec.n, spec.a, self.center[1], -half, half,
                            closed=False).astype(float) / self.side
        return wt, wy

    def flags(self, spec: LatticeSpec) -> tuple[str, ...]:
        return ()


@dataclass(frozen=True)
class StripMollifier:
    """Transverse strip of half-width L times a Gaussian time profile.

    ``1_{[-L, L]}(y) * g(t - s)`` with ``g`` the density of a centered
    normal with the given variance; the ingredient of the normalized strip
    averages.
    """

    half_width: float
    variance: float
    s: float = 0.0

    def weights(self, spec: LatticeSpec) -> tuple[np.ndarray, np.ndarray]:
        period = spec.n * spec.a
        if self.half_width <= 0.0 or self.variance <= 0.0:
            raise ValueError("half-width and variance must be positive")
        if 2.0 * self.half_width > period:
            raise ValueError("strip does not fit inside the torus")
        if _GAUSSIAN_SUPPORT_SIGMAS * math.sqrt(self.variance) > period:
            raise ValueError("time mollifier does not fit inside the torus")
        wt = _gaussian_weights(spec.n, spec.a, self.s, self.variance)
        wy = _interval_mask(spec.n, spec.a, 0.0, -self.half_width,
                            self.half_width, closed=True).astype(float)
        return wt, wy

    def flags(self, spec: LatticeSpec) -> tuple[str, ...]:
        if self.variance < (_UNDER_RESOLVED_FACTOR * spec.a) ** 2:
            return ("under-resolved",)
        return ()


@dataclass(frozen=True)
class GaussianTime:
    """Gaussian time profile times the full transverse extent."""

    s: float
    variance: float

    def weights(self, spec: LatticeSpec) -> tuple[np.ndarray, np.ndarray]:
        period = spec.n * spec.a
        if self.variance <= 0.0:
            raise ValueError("variance must be positive")
        if _GAUSSIAN_SUPPORT_SIGMAS * math.sqrt(self.variance) > period:
            raise ValueError("time mollifier does not fit inside the torus")
        wt = _gaussian_weights(spec.n, spec.a, self.s, self.variance)
        return wt, np.ones(spec.n)

    def flags(self, spec: LatticeSpec) -> tuple[str, ...]:
        if self.variance < (_UNDER_RESOLVED_FACTOR * spec.a) ** 2:
            return ("under-resolved",)
        return ()


class FieldSample(NamedTuple):
    """One pairing of the renormalized field with a test function."""

    value: float
    spec: LatticeSpec
    flags: tuple[str, ...]


def pair_field(config: SpinConfiguration, spec: LatticeSpec, f) -> FieldSample:
    """Pair one configuration with a separable test function.

    Parameters
    ----------
    config : SpinConfiguration
        Spin state on the torus matching ``spec.n``.
    spec : LatticeSpec
        Geometry (only ``n`` and ``a`` are used).
    f : test function
        Any of the separable kinds in this module (an object with a
        ``weights(spec)`` method returning row and column weights).

    Returns
    -------
    FieldSample
        ``a**(15/8)`` times the weighted spin sum, with the test
        function's resolution flags.
    """
    if config.n != spec.n:
        raise ValueError("configuration size does not match the spec")
    wt, wy = f.weights(spec)
    scale = spec.a ** _RENORM_POWER
    value = scale * float(wt @ (config.spins @ wy))
    return FieldSample(value=value, spec=spec, flags=tuple(f.flags(spec)))


def pair_field_values(configs, spec: LatticeSpec, f) -> np.ndarray:
    """Pairing values across a batch of configurations."""
    wt, wy = f.weights(spec)
    scale = spec.a ** _RENORM_POWER
    out = np.empty(len(configs))
    for k, c in enumerate(configs):
        out[k] = scale * float(wt @ (c.spins @ wy))
    return out


@dataclass(frozen=True)
class LineAverageSamples:
    """Centered, normalized strip-average samples across a run.

    ``values[k]`` is ``(pairing_k - run mean) / sqrt(2 L)`` for the strip
    of half-width L with Gaussian time mollification at time ``s``.
    """

    half_width: float
    s: float
    variance: float
    values: np.ndarray
    raw_mean: float
    flags: tuple[str, ...]


def line_average_matrix(configs, spec: LatticeSpec,
                        combos: Sequence[tuple[float, float, float]],
                        center: bool = True):
    """Strip-average samples for many (L, s, eps) combinations in one pass.

    Parameters
    ----------
    configs : sized iterable of SpinConfiguration
        Sample set; consumed once.
    combos : sequence of (half_width, s, variance)
        Requested strip averages.
    center : bool
        Subtract each column's empirical mean before normalizing.

    Returns
    -------
    (values, raw_means, flags) : ndarray (n_configs, n_combos), ndarray,
        list of per-combo flag tuples.
    """
    n_cfg = len(configs)
    if n_cfg == 0:
        raise ValueError("no configurations given")
    combos = [(float(L), float(s), float(eps)) for (L, s, eps) in combos]
    strips = sorted({L for (L, _, _) in combos})
    masks = {}
    for L in strips:
        if 2.0 * L > spec.n * spec.a:
            raise ValueError("strip does not fit inside the torus")
        masks[L] = _interval_mask(spec.n, spec.a, 0.0, -L, L, closed=True
                                  ).astype(float)
    gauss = {}
    flags = []
    for (L, s, eps) in combos:
        key = (s, eps)
        if key not in gauss:
            if _GAUSSIAN_SUPPORT_SIGMAS * math.sqrt(eps) > spec.n * spec.a:
                raise ValueError("time mollifier does not fit inside the torus")
            gauss[key] = _gaussian_weights(spec.n, spec.a, s, eps)
        flags.append(("under-resolved",)
                     if eps < (_UNDER_RESOLVED_FACTOR * spec.a) ** 2 else ())
    scale = spec.a ** _RENORM_POWER
    raw = np.empty((n_cfg, len(combos)))
    for k, cfg in enumerate(configs):
        spins = cfg.spins.astype(np.float64)
        rowsums = {L: spins @ masks[L] for L in strips}
        for c, (L, s, eps) in enumerate(combos):
            raw[k, c] = scale * float(gauss[(s, eps)] @ rowsums[L])
    means = raw.mean(axis=0)
    out = raw.copy()
    if center:
        out -= means[np.newaxis, :]
    for c, (L, _, _) in enumerate(combos):
        out[:, c] /= math.sqrt(2.0 * L)
    return out, means, flags


def line_average_samples(configs, spec: LatticeSpec, half_width: float,
                         s: float, variance: float) -> LineAverageSamples:
    """Centered strip-average samples for one (L, s, eps) combination."""
    values, means, flags = line_average_matrix(
        configs, spec, [(half_width, s, variance)])
    return LineAverageSamples(half_width=float(half_width), s=float(s),
                              variance=float(variance), values=values[:, 0],
                              raw_mean=float(means[0]), flags=tuple(flags[0]))


@dataclass(frozen=True)
class FieldCovarianceEstimate:
    """Connected covariance of block fields over all torus displacements.

    ``mean_map[i, j]`` estimates the covariance at displacement
    ``(i, j)`` blocks (torus indexing); built by coarse-graining each
    configuration into blocks of ``block`` sites and correlating the block
    fields over all translations.
    """

    spec: LatticeSpec
    block: int
    mean_map: np.ndarray
    stderr_map: np.ndarray
    n_samples: int
    n_macro_blocks: int

    @property
    def block_spacing(self) -> float:
        return self.block * self.spec.a

    @property
    def n_coarse(self) -> int:
        return self.spec.n // self.block

    def _index(self, displacement: float) -> int:
        ratio = displacement / self.block_spacing
        k = int(round(ratio))
        if abs(ratio - k) > 1e-9:
            raise ValueError(
                f"displacement {displacement:g} is not a multiple of the "
                f"block spacing {self.block_spacing:g}")
        if abs(k) > self.n_coarse // 2:
            raise ValueError(f"displacement {displacement:g} beyond the half-torus")
        return k % self.n_coarse

    def at(self, s: float, y: float) -> tuple[float, float]:
        """Estimate and stderr at continuum displacement ``(s, y)``."""
        i, j = self._index(s), self._index(y)
        # Average the displacement with its mirror; equal in expectation.
        i2, j2 = (-i) % self.n_coarse, (-j) % self.n_coarse
        est = 0.5 * (self.mean_map[i, j] + self.mean_map[i2, j2])
        err = 0.5 * (self.stderr_map[i, j] + self.stderr_map[i2, j2])
        return float(est), float(err)

    def table(self, grid: Sequence[tuple[float, float]]):
        """Rows ``(s, y, estimate, stderr)`` for the displacement grid."""
        return [(float(s), float(y), *self.at(s, y)) for s, y in grid]

    @property
    def s_grid(self) -> np.ndarray:
        half = self.n_coarse // 2
        return self.block_spacing * np.arange(half + 1)

    def transverse_profile(self, s: float):
        """``(y values >= 0, estimates, stderrs)`` at fixed time separation."""
        i = self._index(s)
        i2 = (-i) % self.n_coarse
        half = self.n_coarse // 2
        ys = self.block_spacing * np.arange(half + 1)
        est = np.empty(half + 1)
        err = np.empty(half + 1)
        for j in range(half + 1):
            j2 = (-j) % self.n_coarse
            vals = [self.mean_map[i, j], self.mean_map[i2, j2],
                    self.mean_map[i, j2], self.mean_map[i2, j]]
            errs = [self.stderr_map[i, j], self.stderr_map[i2, j2],
                    self.stderr_map[i, j2], self.stderr_map[i2, j]]
            est[j] = float(np.mean(vals))
            err[j] = float(np.mean(errs)) / 2.0
        return ys, est, err


def estimate_field_covariance(configs, spec: LatticeSpec, block: int = 4,
                              n_macro_blocks: int = 32) -> FieldCovarianceEstimate:
    """Estimate the field covariance from block pairings.

    Each configuration is coarse-grained into square blocks of ``block``
    sites; the normalized block fields are correlated over all torus
    translations (one small FFT per configuration).  The connected
    estimate subtracts the squared mean block field macro-block by
    macro-block, and the standard error is the scatter across macro
    blocks of configurations.
    """
    n_cfg = len(configs)
    if n_cfg < 2:
        raise ValueError("need at least 2 configurations")
    if spec.n % block != 0:
        raise ValueError(f"block width {block} does not divide the side {spec.n}")
    nb = spec.n // block
    n_macro = max(1, min(n_macro_blocks, n_cfg // 2))
    scale = spec.a ** _RENORM_POWER / (block * spec.a) ** 2

    cross_sums = np.zeros((n_macro, nb, nb))
    mean_sums = np.zeros(n_macro)
    counts = np.zeros(n_macro, dtype=int)
    for k, cfg in enumerate(configs):
        if cfg.n != spec.n:
            raise ValueError("configuration size does not match the spec")
        coarse = cfg.spins.astype(np.float64).reshape(nb, block, nb, block
                                                      ).sum(axis=(1, 3)) * scale
        f = np.fft.rfft2(coarse)
        cross = np.fft.irfft2(f * np.conj(f), s=(nb, nb)).real / (nb * nb)
        j = min(k * n_macro // n_cfg, n_macro - 1)
        cross_sums[j] += cross
        mean_sums[j] += coarse.mean()
        counts[j] += 1
    per_block = np.empty((n_macro, nb, nb))
    for j in range(n_macro):
        if counts[j] == 0:
            raise ValueError("internal: empty macro block")
        per_block[j] = cross_sums[j] / counts[j] - (mean_sums[j] / counts[j]) ** 2
    mean_map = per_block.mean(axis=0)
    if n_macro > 1:
        stderr_map = per_block.std(axis=0, ddof=1) / math.sqrt(n_macro)
    else:
        stderr_map = np.full((nb, nb), np.inf)
    return FieldCovarianceEstimate(spec=spec, block=block, mean_map=mean_map,
                                   stderr_map=stderr_map, n_samples=n_cfg,
                                   n_macro_blocks=n_macro)


@dataclass(frozen=True)
class SyntheticCovarianceTable:
    """Covariance profiles from an analytic model, for oracle tests.

    ``values[i, j]`` is the covariance at time separation ``s_values[i]``
    and transverse separation ``y_values[j] >= 0``.
    """

    s_values: np.ndarray
    y_values: np.ndarray
    values: np.ndarray
    stderr: Optional[np.ndarray] = None

    @property
    def s_grid(self) -> np.ndarray:
        return np.asarray(self.s_values, dtype=float)

    def transverse_profile(self, s: float):
        s_arr = np.asarray(self.s_values, dtype=float)
        i = int(np.argmin(np.abs(s_arr - s)))
        if abs(s_arr[i] - s) > 1e-9 * max(1.0, abs(s)):
            raise ValueError(f"s={s:g} not in the table")
        err = (np.zeros_like(self.values[i]) if self.stderr is None
               else np.asarray(self.stderr[i], dtype=float))
        return (np.asarray(self.y_values, dtype=float),
                np.asarray(self.values[i], dtype=float), err)


class ProcessCovarianceRow(NamedTuple):
    s: float
    value: float
    stderr: float
    tail_open: bool


def _close_tail(ys: np.ndarray, est: np.ndarray, err: np.ndarray,
                j_edge: int, n_fit: int = 5):
    """Fit an exponential to the last points and integrate it outward.

    Returns (tail integral for both sides, tail stderr, success flag).
    """
    j_lo = max(1, j_edge - n_fit + 1)
    ys_f = ys[j_lo:j_edge + 1]
    est_f = est[j_lo:j_edge + 1]
    if ys_f.size < 3 or np.any(est_f <= 0.0):
        return 0.0, 0.0, False
    slope, intercept = np.polyfit(ys_f, np.log(est_f), 1)
    if slope >= -1e-12:
        return 0.0, 0.0, False
    rate = -slope
    edge_val = math.exp(intercept + slope * ys[j_edge])
    tail = 2.0 * edge_val / rate
    tail_err = 2.0 * float(err[j_edge]) / rate
    return tail, tail_err, True


def estimate_process_covariance(source, s_values: Optional[Sequence[float]] = None,
                                noise_factor: float = 2.0):
    """Transverse integration of a covariance table.

    For each time separation the transverse profile is integrated by the
    trapezoid rule out to the last point above ``noise_factor`` standard
    errors, and the remainder is closed by an exponential fitted to the
    final points.  A failed tail fit yields ``tail_open=True`` on the row
    and the integral is then a lower bound truncated at the cutoff.

    ``source`` provides ``s_grid`` and ``transverse_profile(s)``; both the
    empirical estimate and the synthetic table satisfy this.
    """
    if s_values is None:
        s_values = list(source.s_grid)
    rows = []
    for s in s_values:
        ys, est, err = source.transverse_profile(float(s))
        finite_err = np.where(np.isfinite(err), err, 0.0)
        above = est > noise_factor * finite_err
        j_edge = 0
        for j in range(est.size):
            if above[j]:
                j_edge = j
            else:
                if j >= 2:
                    break
        if j_edge < 2:
            j_edge = est.size - 1
        dy = np.diff(ys[:j_edge + 1])
        core = float(np.sum(0.5 * (est[:j_edge] + est[1:j_edge + 1]) * dy))
        # Both transverse sides: the profile is even in y.
        core *= 2.0
        core_var = float(np.sum((np.concatenate([[0.5 * dy[0]],
                                                 0.5 * (dy[:-1] + dy[1:]),
                                                 [0.5 * dy[-1]]])
                                 * finite_err[:j_edge + 1] * 2.0) ** 2))
        tail, tail_err, ok = _close_tail(ys, est, finite_err, j_edge)
        rows.append(ProcessCovarianceRow(
            s=float(s), value=core + tail,
            stderr=math.sqrt(core_var + tail_err ** 2),
            tail_open=not ok))
    return rows


class SusceptibilityResult(NamedTuple):
    value: float
    flags: tuple[str, ...]


def susceptibility(z: Sequence[float], s: Sequence[float],
                   rows: Sequence[ProcessCovarianceRow]) -> SusceptibilityResult:
    """Quadratic form ``sum_jl z_j z_l K(s_l - s_j)`` from integrated rows.

    Equals the variance of the correspondingly weighted strip averages in
    the limit.  Values between grid points interpolate linearly; any
    contributing row with an open tail taints the result with the
    "open-tail" flag.
    """
    z = np.asarray(z, dtype=float)
    s_pts = np.asarray(s, dtype=float)
    if z.shape != s_pts.shape or z.ndim != 1:
        raise ValueError("z and s must be matching 1-d sequences")
    grid = np.array([r.s for r in rows])
    vals = np.array([r.value for r in rows])
    order = np.argsort(grid)
    grid, vals = grid[order], vals[order]
    open_rows = np.array([rows[int(i)].tail_open for i in order])
    total = 0.0
    tainted = False
    for j in range(z.size):
        for l in range(z.size):
            d = abs(s_pts[l] - s_pts[j])
            if d > grid[-1] + 1e-12:
                raise ValueError(f"separation {d:g} beyond the table range")
            total += z[j] * z[l] * float(np.interp(d, grid, vals))
            k = int(np.searchsorted(grid, d))
            for kk in (max(k - 1, 0), min(k, grid.size - 1)):
                if open_rows[kk]:
                    tainted = True
    return SusceptibilityResult(value=float(total),
                                flags=("open-tail",) if tainted else ())


class CltRow(NamedTuple):
    half_width: float
    skewness: float
    skew_stderr: float
    excess_kurtosis: float
    kurtosis_stderr: float
    effective_samples: float
    flags: tuple[str, ...]


def _moment_stats(x: np.ndarray) -> tuple[float, float]:
    m = x.mean()
    c = x - m
    m2 = float(np.mean(c ** 2))
    if m2 <= 0.0:
        return 0.0, 0.0
    g1 = float(np.mean(c ** 3)) / m2 ** 1.5
    g2 = float(np.mean(c ** 4)) / m2 ** 2 - 3.0
    return g1, g2


def clt_diagnostics(samples_list: Sequence[LineAverageSamples],
                    n_jackknife: int = 32,
                    min_effective: float = 1000.0) -> list[CltRow]:
    """Normality diagnostics for strip averages across widths.

    Skewness and excess kurtosis per width, with delete-one-block
    jackknife errors; both statistics shrink toward zero as the width
    grows when the averages become Gaussian.  Rows whose effective sample
    size (series length over twice the autocorrelation time) falls below
    ``min_effective`` carry a "low-ess" flag.
    """
    rows = []
    for s in samples_list:
        x = np.asarray(s.values, dtype=float)
        n = x.size
        g1, g2 = _moment_stats(x)
        nb = max(2, min(n_jackknife, n // 4))
        size = n // nb
        jk1, jk2 = [], []
        for b in range(nb):
            mask = np.ones(n, dtype=bool)
            mask[b * size:(b + 1) * size] = False
            a1, a2 = _moment_stats(x[mask])
            jk1.append(a1)
            jk2.append(a2)
        jk1, jk2 = np.array(jk1), np.array(jk2)
        fac = (nb - 1) / nb
        e1 = math.sqrt(max(fac * np.sum((jk1 - jk1.mean()) ** 2), 0.0))
        e2 = math.sqrt(max(fac * np.sum((jk2 - jk2.mean()) ** 2), 0.0))
        tau = integrated_autocorr_time(x)
        ess = n / (2.0 * tau)
        flags = list(s.flags)
        if ess < min_effective:
            flags.append("low-ess")
        rows.append(CltRow(half_width=s.half_width, skewness=g1, skew_stderr=e1,
                           excess_kurtosis=g2, kurtosis_stderr=e2,
                           effective_samples=ess, flags=tuple(flags)))
    return rows
