"""Critical 2-d Ising model on a periodic square lattice.

Spins live on an N x N torus with nearest-neighbor coupling ``beta_j`` and
per-site field ``h_lat = h * a**(15/8)``, the renormalization under which
the magnetization field has a nontrivial small-``a`` limit.  Two update
dynamics are provided: single-site Metropolis and a ghost-bond cluster
update that remains valid at nonzero field.  Both mutate the configuration
in place and are driven by a counter-based generator so runs are
reproducible and splittable across chains.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

__all__ = [
    "LatticeSpec",
    "SpinConfiguration",
    "critical_coupling",
    "wolff_ghost_update",
    "metropolis_sweep",
    "block_site_count",
    "random_configuration",
    "aligned_configuration",
    "reduced_energy",
    "write_snapshot",
    "read_snapshot",
]

_FIELD_SCALING_POWER = 15.0 / 8.0
_SNAPSHOT_MAGIC = b"ISNG"


def critical_coupling() -> float:
    """Exact self-dual coupling of the square-lattice model, ln(1+sqrt 2)/2."""
    return 0.5 * math.log(1.0 + math.sqrt(2.0))


@dataclass(frozen=True)
class LatticeSpec:
    """Simulation cell: size, spacing, coupling, and field.

    Parameters
    ----------
    n : int
        Side length; the torus has ``n**2`` sites.
    h : float
        Renormalized field; the per-site lattice field is
        ``h * a**(15/8)``.
    a : float, optional
        Lattice spacing, default ``1/n``.
    beta_j : float, optional
        Nearest-neighbor coupling, default the exact critical value.
    """

    n: int
    h: float = 0.0
    a: Optional[float] = None
    beta_j: Optional[float] = None

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("lattice side must be at least 2")
        if self.a is None:
            object.__setattr__(self, "a", 1.0 / self.n)
        if self.beta_j is None:
            object.__setattr__(self, "beta_j", critical_coupling())
        if not (self.a > 0.0 and math.isfinite(self.a)):
            raise ValueError("lattice spacing must be positive")
        if not (self.beta_j > 0.0 and math.isfinite(self.beta_j)):
            raise ValueError("coupling must be positive")
        if not (self.h >= 0.0 and math.isfinite(self.h)):
            raise ValueError("field must be nonnegative")

    @property
    def sites(self) -> int:
        return self.n * self.n

    @property
    def h_lat(self) -> float:
        """Per-site field in lattice units."""
        return self.h * self.a ** _FIELD_SCALING_POWER

    @classmethod
    def from_lattice_field(cls, n: int, h_lat: float, a: Optional[float] = None,
                           beta_j: Optional[float] = None) -> "LatticeSpec":
        """Build a spec from the per-site lattice field instead of ``h``."""
        a_val = 1.0 / n if a is None else a
        if h_lat < 0.0:
            raise ValueError("field must be nonnegative")
        return cls(n=n, h=h_lat / a_val ** _FIELD_SCALING_POWER, a=a_val,
                   beta_j=beta_j)


@dataclass
class SpinConfiguration:
    """Mutable spin state on the torus plus its generator and update count."""

    spins: np.ndarray
    sweep_count: int = 0
    rng: Optional[np.random.Generator] = None

    def __post_init__(self):
        s = np.asarray(self.spins)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise ValueError("spins must be a square 2-d array")
        if not np.all(np.abs(s) == 1):
            raise ValueError("spins must be +1 or -1")
        self.spins = s.astype(np.int8, copy=False)

    @property
    def n(self) -> int:
        return self.spins.shape[0]

    def magnetization(self) -> float:
        return float(self.spins.mean())


def random_configuration(spec: LatticeSpec, seed: int = 0,
                         chain_index: int = 0) -> SpinConfiguration:
    """Hot start: i.i.d. uniform spins from a per-chain counter-based key."""
    rng = np.random.Generator(np.random.Philox(key=(int(seed), int(chain_index))))
    spins = (rng.integers(0, 2, size=(spec.n, spec.n)) * 2 - 1).astype(np.int8)
    return SpinConfiguration(spins=spins, sweep_count=0, rng=rng)


def aligned_configuration(spec: LatticeSpec, value: int = 1, seed: int = 0,
                          chain_index: int = 0) -> SpinConfiguration:
    """Cold start: all spins equal to ``value``."""
    if value not in (-1, 1):
        raise ValueError("value must be +1 or -1")
    rng = np.random.Generator(np.random.Philox(key=(int(seed), int(chain_index))))
    spins = np.full((spec.n, spec.n), value, dtype=np.int8)
    return SpinConfiguration(spins=spins, sweep_count=0, rng=rng)


@njit(cache=True)
def _metropolis_sweeps(spins, b2j, h2, n_sweeps, rng):  # pragma: no cover
    n = spins.shape[0]
    accepted = 0
    for _ in range(n_sweeps):
        for _ in range(n * n):
            i = rng.integers(0, n)
            j = rng.integers(0, n)
            s = spins[i, j]
            nb = (spins[(i + 1) % n, j] + spins[(i - 1) % n, j]
                  + spins[i, (j + 1) % n] + spins[i, (j - 1) % n])
            # Increase of beta*E when flipping s.
            d = b2j * s * nb + h2 * s
            if d <= 0.0 or rng.random() < math.exp(-d):
                spins[i, j] = -s
                accepted += 1
    return accepted


@njit(cache=True)
def _wolff_updates(spins, p_bond, p_ghost, n_updates, rng):  # pragma: no cover
    n = spins.shape[0]
    stack = np.empty(n * n, dtype=np.int64)
    cluster = np.empty(n * n, dtype=np.int64)
    in_cluster = np.zeros((n, n), dtype=np.uint8)
    total_flipped = 0
    total_grown = 0
    ghost_hits = 0
    for _ in range(n_updates):
        i0 = rng.integers(0, n)
        j0 = rng.integers(0, n)
        s0 = spins[i0, j0]
        top = 0
        size = 0
        stack[top] = i0 * n + j0
        top += 1
        in_cluster[i0, j0] = 1
        ghost = False
        while top > 0:
            top -= 1
            idx = stack[top]
            ci = idx // n
            cj = idx % n
            cluster[size] = idx
            size += 1
            # Ghost bond: the auxiliary field spin is aligned with +1, so
            # only +1 clusters can attach to it.  Each site's ghost bond
            # gets exactly one trial: from the site side while the ghost
            # is outside the cluster, or from the ghost side the moment it
            # joins, when it offers a bond to every aligned site still
            # outside.  Bonds into the cluster interior stay untried, as
            # for lattice bonds.
            if s0 == 1 and p_ghost > 0.0 and not ghost:
                if rng.random() < p_ghost:
                    ghost = True
                    for gi in range(n):
                        for gj in range(n):
                            if in_cluster[gi, gj] == 0 and spins[gi, gj] == s0:
                                if rng.random() < p_ghost:
                                    in_cluster[gi, gj] = 1
                                    stack[top] = gi * n + gj
                                    top += 1
            for k in range(4):
                if k == 0:
                    ni, nj = (ci + 1) % n, cj
                elif k == 1:
                    ni, nj = (ci - 1 + n) % n, cj
                elif k == 2:
                    ni, nj = ci, (cj + 1) % n
                else:
                    ni, nj = ci, (cj - 1 + n) % n
                if in_cluster[ni, nj] == 0 and spins[ni, nj] == s0:
                    if rng.random() < p_bond:
                        in_cluster[ni, nj] = 1
                        stack[top] = ni * n + nj
                        top += 1
        if ghost:
            # The cluster contains the field spin; flipping it would flip
            # the field.  Flip the complement instead, which is the same
            # move composed with a global flip (a symmetry of the
            # field-extended model).
            ghost_hits += 1
            for ii in range(n):
                for jj in range(n):
                    spins[ii, jj] = -spins[ii, jj]
            for c in range(size):
                idx = cluster[c]
                spins[idx // n, idx % n] = s0
            total_flipped += n * n - size
        else:
            for c in range(size):
                idx = cluster[c]
                spins[idx // n, idx % n] = -s0
            total_flipped += size
        for c in range(size):
            idx = cluster[c]
            in_cluster[idx // n, idx % n] = 0
        total_grown += size
    return total_flipped, total_grown, ghost_hits


@njit(cache=True)
def _sums(spins):  # pragma: no cover
    n = spins.shape[0]
    bond = 0
    mag = 0
    for i in range(n):
        for j in range(n):
            s = spins[i, j]
            bond += s * (spins[(i + 1) % n, j] + spins[i, (j + 1) % n])
            mag += s
    return bond, mag


def metropolis_sweep(config: SpinConfiguration, spec: LatticeSpec,
                     n_sweeps: int = 1) -> SpinConfiguration:
    """Run ``n_sweeps`` Metropolis sweeps (``n**2`` proposals each) in place.

    Single-site proposals accepted with probability ``min(1, exp(-dE))``
    where ``dE`` is the change of the reduced energy; satisfies detailed
    balance for the Boltzmann weight at (``beta_j``, ``h_lat``).
    """
    if config.rng is None:
        raise ValueError("configuration carries no generator; build it via "
                         "random_configuration or attach one")
    _metropolis_sweeps(config.spins, 2.0 * spec.beta_j, 2.0 * spec.h_lat,
                       int(n_sweeps), config.rng)
    config.sweep_count += int(n_sweeps)
    return config


def wolff_ghost_update(config: SpinConfiguration, spec: LatticeSpec,
                       n_updates: int = 1) -> SpinConfiguration:
    """Run ghost-bond cluster updates in place.

    Bonds between aligned neighbors open with probability
    ``1 - exp(-2 beta_j)``; every +1 site in the growing cluster also tries
    a bond to a fixed +1 field spin with probability ``1 - exp(-2 h_lat)``.
    A cluster attached to the field spin flips its complement instead of
    itself, keeping the move rejection-free and in detailed balance at
    ``h_lat >= 0``.
    """
    if spec.h_lat < 0.0:
        raise ValueError("ghost-bond update requires a nonnegative field")
    if config.rng is None:
        raise ValueError("configuration carries no generator; build it via "
                         "random_configuration or attach one")
    p_bond = -math.expm1(-2.0 * spec.beta_j)
    p_ghost = -math.expm1(-2.0 * spec.h_lat)
    _wolff_updates(config.spins, p_bond, p_ghost, int(n_updates), config.rng)
    config.sweep_count += int(n_updates)
    return config


def reduced_energy(config: SpinConfiguration, spec: LatticeSpec) -> float:
    """Reduced energy ``-beta_j * sum(s s') - h_lat * sum(s)``.

    The bond and spin sums are accumulated in exact integer arithmetic.
    """
    bond, mag = _sums(config.spins)
    return -spec.beta_j * float(bond) - spec.h_lat * float(mag)


def block_site_count(a: float, side: float, center: float = 0.0) -> int:
    """Number of lattice sites of ``a * Z^2`` in an axis-aligned square.

    The square has the given ``side`` and is centered at
    ``(center, center)``; each axis uses the half-open window
    ``[center - side/2, center + side/2)``.  As ``a`` shrinks the count
    approaches ``(side/a)**2``.
    """
    if a <= 0.0 or side <= 0.0:
        raise ValueError("spacing and side must be positive")
    lo = math.ceil((center - side / 2.0) / a - 1e-12)
    hi = math.ceil((center + side / 2.0) / a - 1e-12) - 1
    per_axis = hi - lo + 1
    if per_axis < 0:
        per_axis = 0
    return per_axis * per_axis


def write_snapshot(path, config: SpinConfiguration) -> None:
    """Write a configuration as packed sign bits with a 16-byte header.

    Layout: 4-byte magic, little-endian uint32 side length, little-endian
    uint64 sweep count, then row-major bits (1 for spin +1), 8 spins per
    byte, rows padded to whole bytes.
    """
    n = config.n
    header = _SNAPSHOT_MAGIC + np.uint32(n).tobytes() + np.uint64(
        config.sweep_count).tobytes()
    bits = np.packbits((config.spins > 0).astype(np.uint8), axis=1)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(bits.tobytes())


def read_snapshot(path) -> SpinConfiguration:
    """Read a configuration written by ``write_snapshot`` (no generator)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16 or raw[:4] != _SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not a spin snapshot")
    n = int(np.frombuffer(raw[4:8], dtype=np.uint32)[0])
    sweeps = int(np.frombuffer(raw[8:16], dtype=np.uint64)[0])
    row_bytes = (n + 7) // 8
    body = np.frombuffer(raw[16:], dtype=np.uint8)
    if body.size != n * row_bytes:
        raise ValueError(f"{path}: body holds {body.size} bytes, "
                         f"expected {n * row_bytes}")
    bits = np.unpackbits(body.reshape(n, row_bytes), axis=1)[:, :n]
    spins = (bits.astype(np.int8) * 2 - 1)
    return SpinConfiguration(spins=spins, sweep_count=sweeps, rng=None)
