"""Markov-chain drivers and estimators on top of the lattice kernels.

A chain advances by composite steps: one Metropolis sweep and/or a batch
of ghost-bond cluster updates, per the chosen algorithm.  Observables are
recorded after thermalization at a fixed thinning interval.  Two-point
functions are measured per sample as translation-averaged correlation
maps (one FFT per sample) and stored as series for the requested
displacements, so error bars can use blocking.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .lattice import (LatticeSpec, SpinConfiguration, metropolis_sweep,
                      random_configuration, wolff_ghost_update, _wolff_updates)

__all__ = [
    "ChainStats",
    "BlockedError",
    "PackedConfigurations",
    "run_chain",
    "run_ensemble",
    "sample_configurations",
    "two_point",
    "pooled_two_point",
    "integrated_autocorr_time",
    "blocked_stderr",
]


class PackedConfigurations:
    """Re-iterable store of spin configurations as packed sign bits.

    Keeps large sample sets at one bit per spin; iteration unpacks each
    configuration on the fly (without a generator attached).
    """

    def __init__(self, n: int):
        self.n = int(n)
        self._rows: list[np.ndarray] = []
        self._sweeps: list[int] = []

    def append(self, config: SpinConfiguration) -> None:
        if config.n != self.n:
            raise ValueError("configuration size mismatch")
        self._rows.append(np.packbits((config.spins > 0).astype(np.uint8), axis=1))
        self._sweeps.append(config.sweep_count)

    def __len__(self) -> int:
        return len(self._rows)

    def __getitem__(self, i: int) -> SpinConfiguration:
        bits = np.unpackbits(self._rows[i], axis=1)[:, : self.n]
        spins = bits.astype(np.int8) * 2 - 1
        return SpinConfiguration(spins=spins, sweep_count=self._sweeps[i], rng=None)

    def __iter__(self):
        for i in range(len(self._rows)):
            yield self[i]

_ALGORITHMS = ("wolff", "metropolis", "mixed")


class BlockedError(NamedTuple):
    """Blocking error estimate with its plateau diagnostic."""

    stderr: float
    plateaued: bool
    block_size: int


def blocked_stderr(series: Sequence[float], min_blocks: int = 16) -> BlockedError:
    """Blocking estimate of the error of the series mean.

    Doubles the block size while at least ``min_blocks`` blocks remain and
    reports the largest stable estimate; ``plateaued`` is False when the
    estimate was still growing at the coarsest usable blocking (error bars
    then underestimate).
    """
    x = np.asarray(series, dtype=float)
    n = x.size
    if n < 2:
        return BlockedError(stderr=math.inf, plateaued=False, block_size=n)
    best = float(np.std(x, ddof=1) / math.sqrt(n))
    best_size = 1
    prev = best
    growing = True
    size = 2
    while n // size >= min_blocks:
        nb = n // size
        means = x[: nb * size].reshape(nb, size).mean(axis=1)
        est = float(np.std(means, ddof=1) / math.sqrt(nb))
        if est > best:
            best = est
            best_size = size
        growing = est > prev * 1.05
        prev = est
        size *= 2
    return BlockedError(stderr=best, plateaued=not growing, block_size=best_size)


def integrated_autocorr_time(series: Sequence[float], window_factor: float = 6.0) -> float:
    """Integrated autocorrelation time with a self-consistent cutoff.

    Sums normalized autocorrelations up to the smallest window exceeding
    ``window_factor`` times the running estimate.  Returns 0.5 for white
    noise; units are samples.
    """
    x = np.asarray(series, dtype=float)
    n = x.size
    if n < 4:
        return 0.5
    x = x - x.mean()
    var = float(x @ x) / n
    if var <= 0.0:
        return 0.5
    # FFT autocorrelation, normalized.
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, m)
    acf = np.fft.irfft(f * np.conj(f))[:n].real / (var * n)
    tau = 0.5
    for k in range(1, n // 2):
        tau += float(acf[k])
        if k >= window_factor * tau:
            break
    return max(tau, 0.5)


@dataclass(frozen=True)
class ChainStats:
    """Observables of one chain after thermalization."""

    spec: LatticeSpec
    seed: int
    chain_index: int
    algorithm: str
    n_therm: int
    thin: int
    magnetization: np.ndarray
    displacements: tuple[tuple[int, int], ...]
    two_point_series: np.ndarray  # shape (n_samples, n_displacements)
    structure_factor_k1: np.ndarray
    autocorr_time: float
    cluster_updates_per_step: int
    flags: tuple[str, ...] = ()

    @property
    def n_samples(self) -> int:
        return self.magnetization.size

    def magnetization_mean(self) -> float:
        return float(self.magnetization.mean())

    def magnetization_stderr(self) -> BlockedError:
        return blocked_stderr(self.magnetization)

    def correlation_length(self) -> float:
        """Second-moment correlation length from the structure factor.

        Compares the connected zero mode with the lowest nonzero mode;
        requires the structure-factor series (recorded whenever two-point
        maps are measured).  NaN when unavailable or negative under noise.
        """
        if self.structure_factor_k1.size == 0:
            return math.nan
        n = self.spec.n
        m = self.magnetization
        s0 = n * n * float(m.var())
        s1 = float(self.structure_factor_k1.mean())
        if s1 <= 0.0 or s0 <= s1:
            return math.nan
        return math.sqrt((s0 / s1 - 1.0) / (4.0 * math.sin(math.pi / n) ** 2))

    @property
    def two_point_accumulators(self) -> dict:
        """Displacement -> (sum, sum of squares, count) over samples."""
        out = {}
        for i, d in enumerate(self.displacements):
            col = self.two_point_series[:, i]
            out[d] = (float(col.sum()), float((col * col).sum()), int(col.size))
        return out


def _axis_displacements(n: int) -> tuple[tuple[int, int], ...]:
    half = n // 2
    out = [(k, 0) for k in range(1, half + 1)]
    out += [(0, k) for k in range(1, half + 1)]
    return tuple(out)


def _correlation_map(spins: np.ndarray) -> tuple[np.ndarray, float]:
    """Translation-averaged raw two-point map via FFT.

    Also returns the structure factor averaged over the two lowest
    nonzero momenta (for second-moment correlation lengths).
    """
    n = spins.shape[0]
    f = np.fft.rfft2(spins.astype(np.float64))
    sf_k1 = (abs(f[0, 1]) ** 2 + abs(f[1, 0]) ** 2) / (2.0 * n * n)
    cmap = np.fft.irfft2(f * np.conj(f), s=(n, n)).real / (n * n)
    return cmap, float(sf_k1)


def _advance(config: SpinConfiguration, spec: LatticeSpec, algorithm: str,
             n_steps: int, wolff_per_step: int) -> None:
    for _ in range(n_steps):
        if algorithm in ("metropolis", "mixed"):
            metropolis_sweep(config, spec, 1)
        if algorithm in ("wolff", "mixed"):
            wolff_ghost_update(config, spec, wolff_per_step)


def _calibrate_wolff(config: SpinConfiguration, spec: LatticeSpec,
                     n_probe: int = 32) -> int:
    """Pick cluster updates per step so one step grows about N^2/2 sites.

    Grown-cluster size is the right work measure: a cluster attached to
    the field spin flips only its complement, but the whole cluster was
    visited and decorrelated.
    """
    p_bond = -math.expm1(-2.0 * spec.beta_j)
    p_ghost = -math.expm1(-2.0 * spec.h_lat)
    _, grown, _ = _wolff_updates(config.spins, p_bond, p_ghost, n_probe,
                                 config.rng)
    config.sweep_count += n_probe
    mean_cluster = max(grown / n_probe, 1.0)
    per_step = int(math.ceil(spec.sites / (2.0 * mean_cluster)))
    return min(max(per_step, 1), 64)


def run_chain(spec: LatticeSpec, n_therm: int, n_samples: int, thin: int,
              seed: int, chain_index: int = 0, algorithm: str = "mixed",
              displacements: Optional[Sequence[tuple[int, int]]] = None,
              measure_two_point: bool = True) -> ChainStats:
    """Run one chain and record magnetization and two-point series.

    Parameters
    ----------
    spec : LatticeSpec
        Model parameters.
    n_therm : int
        Composite steps discarded before sampling.
    n_samples : int
        Recorded samples.
    thin : int
        Composite steps between consecutive samples.
    seed, chain_index : int
        Counter-based generator key; fixed inputs give identical output.
    algorithm : str
        "wolff", "metropolis", or "mixed" (one sweep plus a calibrated
        batch of cluster updates per step).
    displacements : sequence of (dx, dy), optional
        Two-point displacements to record; defaults to both axes out to
        ``n // 2``.
    measure_two_point : bool
        Disable to skip correlation maps entirely.

    Returns
    -------
    ChainStats
        Immutable record; error bars and autocorrelation estimates are
        derived from the stored series.
    """
    if algorithm not in _ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    if n_therm < 1 or n_samples < 1 or thin < 1:
        raise ValueError("n_therm, n_samples, thin must all be positive")
    if measure_two_point:
        disp = (_axis_displacements(spec.n) if displacements is None
                else tuple((int(dx), int(dy)) for dx, dy in displacements))
    else:
        disp = ()
    for dx, dy in disp:
        if abs(dx) > spec.n // 2 or abs(dy) > spec.n // 2:
            raise ValueError(f"displacement {(dx, dy)} beyond the half-torus")

    config = random_configuration(spec, seed=seed, chain_index=chain_index)
    wolff_per_step = 1
    if algorithm in ("wolff", "mixed"):
        _advance(config, spec, algorithm, max(n_therm // 4, 1), 1)
        wolff_per_step = _calibrate_wolff(config, spec)
    _advance(config, spec, algorithm, n_therm, wolff_per_step)

    mag = np.empty(n_samples)
    tp = np.empty((n_samples, len(disp)))
    sf = np.empty(n_samples if measure_two_point else 0)
    flags: list[str] = []
    for k in range(n_samples):
        _advance(config, spec, algorithm, thin, wolff_per_step)
        mag[k] = config.magnetization()
        if measure_two_point:
            if disp:
                cmap, sf[k] = _correlation_map(config.spins)
                for i, (dx, dy) in enumerate(disp):
                    tp[k, i] = cmap[dx % spec.n, dy % spec.n]
            else:
                f = np.fft.rfft2(config.spins.astype(np.float64))
                sf[k] = (abs(f[0, 1]) ** 2 + abs(f[1, 0]) ** 2) / (2.0 * spec.sites)
    tau = integrated_autocorr_time(mag)
    if tau > n_samples / 50.0:
        flags.append("short-series")
    if n_samples < 32:
        flags.append("few-samples")
    return ChainStats(spec=spec, seed=seed, chain_index=chain_index,
                      algorithm=algorithm, n_therm=n_therm, thin=thin,
                      magnetization=mag, displacements=disp,
                      two_point_series=tp, structure_factor_k1=sf,
                      autocorr_time=tau,
                      cluster_updates_per_step=wolff_per_step,
                      flags=tuple(flags))


def _chain_worker(args) -> ChainStats:
    return run_chain(**args)


def run_ensemble(spec: LatticeSpec, n_chains: int, n_therm: int,
                 n_samples: int, thin: int, seed: int,
                 algorithm: str = "mixed",
                 displacements: Optional[Sequence[tuple[int, int]]] = None,
                 measure_two_point: bool = True,
                 threads: int = 1) -> list[ChainStats]:
    """Run independent chains, optionally in parallel.

    Chain ``k`` uses generator key ``(seed, k)``; results are returned
    ordered by chain index regardless of completion order, so the reduction
    is deterministic.
    """
    if n_chains < 1:
        raise ValueError("n_chains must be positive")
    jobs = [dict(spec=spec, n_therm=n_therm, n_samples=n_samples, thin=thin,
                 seed=seed, chain_index=k, algorithm=algorithm,
                 displacements=displacements,
                 measure_two_point=measure_two_point)
            for k in range(n_chains)]
    if threads <= 1 or n_chains == 1:
        return [_chain_worker(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(threads, n_chains)) as pool:
        return list(pool.map(_chain_worker, jobs))


def sample_configurations(spec: LatticeSpec, n_samples: int, thin: int,
                          seed: int, n_therm: int, chain_index: int = 0,
                          algorithm: str = "mixed", pack: bool = False):
    """Collect decorrelated spin configurations from one chain.

    With ``pack`` the result is a bit-packed re-iterable store (one bit
    per spin) instead of a list, for large sample sets.
    """
    if algorithm not in _ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    if n_therm < 1 or n_samples < 1 or thin < 1:
        raise ValueError("n_therm, n_samples, thin must all be positive")
    config = random_configuration(spec, seed=seed, chain_index=chain_index)
    wolff_per_step = 1
    if algorithm in ("wolff", "mixed"):
        _advance(config, spec, algorithm, max(n_therm // 4, 1), 1)
        wolff_per_step = _calibrate_wolff(config, spec)
    _advance(config, spec, algorithm, n_therm, wolff_per_step)
    out = PackedConfigurations(spec.n) if pack else []
    for _ in range(n_samples):
        _advance(config, spec, algorithm, thin, wolff_per_step)
        if pack:
            out.append(config)  # stores packed bits, keeps no reference
        else:
            out.append(SpinConfiguration(spins=config.spins.copy(),
                                         sweep_count=config.sweep_count,
                                         rng=None))
    return out


def _disp_index(stats: ChainStats, x: tuple[int, int]) -> int:
    dx, dy = int(x[0]), int(x[1])
    n = stats.spec.n
    if abs(dx) > n // 2 or abs(dy) > n // 2:
        raise ValueError(f"displacement {(dx, dy)} beyond the half-torus")
    try:
        return stats.displacements.index((dx, dy))
    except ValueError:
        # Torus symmetry: try the mirrored displacement.
        try:
            return stats.displacements.index((abs(dx), abs(dy)))
        except ValueError:
            raise ValueError(f"displacement {(dx, dy)} was not recorded") from None


def two_point(stats: ChainStats, x: tuple[int, int],
              connected: bool = False) -> tuple[float, float]:
    """Two-point estimate and blocking stderr at displacement ``x``.

    ``x = (0, 0)`` with ``connected=False`` returns exactly (1, 0).  The
    connected variant subtracts the squared magnetization block by block.
    """
    if tuple(x) == (0, 0) and not connected:
        return 1.0, 0.0
    i = _disp_index(stats, x)
    prod = stats.two_point_series[:, i]
    if not connected:
        est = float(prod.mean())
        err = blocked_stderr(prod).stderr
        return est, err
    mag = stats.magnetization
    n = prod.size
    nb = max(min(32, n // 2), 1)
    size = n // nb
    vals = []
    for b in range(nb):
        sl = slice(b * size, (b + 1) * size)
        vals.append(prod[sl].mean() - mag[sl].mean() ** 2)
    vals = np.asarray(vals)
    est = float(prod.mean() - mag.mean() ** 2)
    err = float(vals.std(ddof=1) / math.sqrt(nb)) if nb > 1 else math.inf
    return est, err


def pooled_two_point(stats_list: Sequence[ChainStats], x: tuple[int, int],
                     connected: bool = False) -> tuple[float, float]:
    """Combine chains: mean of per-chain estimates, scatter-based stderr."""
    if not stats_list:
        raise ValueError("no chains given")
    pairs = [two_point(s, x, connected=connected) for s in stats_list]
    vals = np.array([p[0] for p in pairs])
    errs = np.array([p[1] for p in pairs])
    est = float(vals.mean())
    c = len(stats_list)
    if c == 1:
        return est, float(errs[0])
    scatter = float(vals.std(ddof=1) / math.sqrt(c))
    quad = float(np.sqrt(np.sum(errs ** 2)) / c)
    return est, max(scatter, quad)
