"""Mass spectral measures: atoms plus power-law density pieces on the mass line.

A measure is a finite collection of point masses ``(m, w)`` together with
density pieces ``A * m**p dm`` supported on ``[m_lo, m_hi)`` (``m_hi`` may be
``inf``).  The same container is used for the spectral measure appearing in
the Kallen-Lehmann representation of the planar field's covariance and for
its ``pi/m`` reweighting, whose plain Laplace transform is the covariance of
the line-averaged process.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence, Union


class Atom(NamedTuple):
    mass: float
    weight: float


class Piece(NamedTuple):
    m_lo: float
    m_hi: float
    amplitude: float
    exponent: float

    @property
    def is_infinite(self) -> bool:
        return math.isinf(self.m_hi)


def _as_atom(raw) -> Atom:
    m, w = raw
    return Atom(float(m), float(w))


def _as_piece(raw) -> Piece:
    lo, hi, amp, p = raw
    return Piece(float(lo), float(hi), float(amp), float(p))


# Relative slack for "touches m1" and ordering checks on parsed floats.
_REL_TOL = 1e-12


@dataclass(frozen=True)
class MassSpectralMeasure:
    """Positive measure on the mass half-line ``(0, inf)``.

    Parameters
    ----------
    atoms : sequence of (mass, weight)
        Point masses; both entries strictly positive.
    pieces : sequence of (m_lo, m_hi, amplitude, exponent)
        Density pieces ``A * m**p dm`` on ``[m_lo, m_hi)``.  ``m_hi = inf``
        is allowed provided ``exponent < 0`` so the derived covariance
        measure (reweighted by ``pi/m``) stays finite.
    m1 : float
        Infimum of the support; must be attained by an atom or a piece
        lower endpoint.
    """

    atoms: tuple = ()
    pieces: tuple = ()
    m1: float = 0.0

    def __init__(self, atoms: Iterable = (), pieces: Iterable = (), m1: float | None = None):
        atoms = tuple(sorted((_as_atom(a) for a in atoms), key=lambda a: a.mass))
        pieces = tuple(sorted((_as_piece(p) for p in pieces),
                              key=lambda p: (p.m_lo, p.m_hi)))
        starts = [a.mass for a in atoms] + [p.m_lo for p in pieces]
        if not starts:
            raise ValueError("measure must contain at least one atom or piece")
        if m1 is None:
            m1 = min(starts)
        m1 = float(m1)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "pieces", pieces)
        object.__setattr__(self, "m1", m1)
        self._validate()

    def _validate(self) -> None:
        if not (self.m1 > 0.0) or math.isinf(self.m1):
            raise ValueError(f"m1 must be a positive finite real, got {self.m1}")
        slack = self.m1 * _REL_TOL
        for a in self.atoms:
            if not (a.mass > 0.0) or math.isinf(a.mass):
                raise ValueError(f"atom mass must be positive finite, got {a.mass}")
            if not (a.weight > 0.0) or math.isinf(a.weight):
                raise ValueError(f"atom weight must be positive finite, got {a.weight}")
            if a.mass < self.m1 - slack:
                raise ValueError(f"atom mass {a.mass} lies below m1={self.m1}")
        for p in self.pieces:
            if not (p.m_lo > 0.0) or math.isinf(p.m_lo):
                raise ValueError(f"piece lower endpoint must be positive finite, got {p.m_lo}")
            if not (p.m_hi > p.m_lo):
                raise ValueError(f"piece endpoints must satisfy m_lo < m_hi, got [{p.m_lo}, {p.m_hi})")
            if not (p.amplitude > 0.0) or math.isinf(p.amplitude):
                raise ValueError(f"piece amplitude must be positive finite, got {p.amplitude}")
            if p.m_lo < self.m1 - slack:
                raise ValueError(f"piece lower endpoint {p.m_lo} lies below m1={self.m1}")
            if p.is_infinite and p.exponent >= 0.0:
                # exponent < 0 keeps the pi/m reweighted measure (and the
                # covariance it generates) finite at every positive distance.
                raise ValueError(
                    f"piece on [{p.m_lo}, inf) needs a negative exponent, got {p.exponent}"
                )
        touched = any(abs(a.mass - self.m1) <= slack for a in self.atoms) or any(
            abs(p.m_lo - self.m1) <= slack for p in self.pieces
        )
        if not touched:
            raise ValueError(f"support infimum m1={self.m1} is not attained by any component")

    # -- structural helpers -------------------------------------------------

    def atom_at(self, mass: float, rel_tol: float = _REL_TOL) -> Atom | None:
        """Return the atom sitting at ``mass`` (within relative slack), if any."""
        for a in self.atoms:
            if abs(a.mass - mass) <= rel_tol * max(abs(mass), 1.0):
                return a
        return None

    def spectral_gap_above_m1(self) -> float:
        """Width of the open interval above ``m1`` carrying no mass.

        Zero when a component other than the ``m1`` atom starts at ``m1``
        itself (no structural gap).
        """
        gap = math.inf
        slack = self.m1 * _REL_TOL
        for a in self.atoms:
            if a.mass > self.m1 + slack:
                gap = min(gap, a.mass - self.m1)
        for p in self.pieces:
            if p.m_lo > self.m1 + slack:
                gap = min(gap, p.m_lo - self.m1)
            else:
                return 0.0
        return gap

    def total_mass(self) -> float:
        """Total measure; ``inf`` when some piece has a non-integrable tail."""
        tot = sum(a.weight for a in self.atoms)
        for p in self.pieces:
            tot += _power_piece_integral(p, shift=0)
        return tot


def _power_piece_integral(p: Piece, shift: float) -> float:
    """Integral of ``A * m**(p.exponent + shift)`` over the piece support."""
    q = p.exponent + shift
    if p.is_infinite:
        if q >= -1.0:
            return math.inf
        return p.amplitude * p.m_lo ** (q + 1.0) / (-(q + 1.0))
    if q == -1.0:
        return p.amplitude * math.log(p.m_hi / p.m_lo)
    return p.amplitude * (p.m_hi ** (q + 1.0) - p.m_lo ** (q + 1.0)) / (q + 1.0)


def covariance_measure(spectral: MassSpectralMeasure) -> MassSpectralMeasure:
    """Reweight a spectral measure by ``pi/m``.

    The returned measure's plain Laplace transform equals the process
    covariance built from ``spectral``; atoms map to ``(m, pi*w/m)`` and a
    density piece ``A*m**p`` maps to ``pi*A*m**(p-1)``.
    """
    atoms = [(a.mass, math.pi * a.weight / a.mass) for a in spectral.atoms]
    pieces = [(p.m_lo, p.m_hi, math.pi * p.amplitude, p.exponent - 1.0) for p in spectral.pieces]
    return MassSpectralMeasure(atoms=atoms, pieces=pieces, m1=spectral.m1)


def first_moment(measure: MassSpectralMeasure) -> float:
    """First moment ``integral of m`` against the measure.

    Returns ``math.inf`` exactly when some infinite piece decays too slowly
    (exponent ``>= -2``); otherwise the finite closed-form value.
    """
    for p in measure.pieces:
        if p.is_infinite and p.exponent >= -2.0:
            return math.inf
    tot = sum(a.mass * a.weight for a in measure.atoms)
    for p in measure.pieces:
        tot += _power_piece_integral(p, shift=1.0)
    return tot


# -- plain-text serialization ----------------------------------------------
#
# One record per line, whitespace separated, '#' starts a comment:
#   m1 <value>
#   atom <mass> <weight>
#   piece <m_lo> <m_hi> <amplitude> <exponent>     (m_hi may be 'inf')


def _fmt(x: float) -> str:
    if math.isinf(x):
        return "inf"
    return repr(float(x))


def format_measure(measure: MassSpectralMeasure) -> str:
    lines = [f"m1 {_fmt(measure.m1)}"]
    for a in measure.atoms:
        lines.append(f"atom {_fmt(a.mass)} {_fmt(a.weight)}")
    for p in measure.pieces:
        lines.append(
            f"piece {_fmt(p.m_lo)} {_fmt(p.m_hi)} {_fmt(p.amplitude)} {_fmt(p.exponent)}"
        )
    return "\n".join(lines) + "\n"


def _parse_float(tok: str, lineno: int) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise ValueError(f"line {lineno}: expected a number, got {tok!r}") from None
    if math.isnan(v):
        raise ValueError(f"line {lineno}: nan is not a valid value")
    return v


def parse_measure(text: str) -> MassSpectralMeasure:
    """Parse the plain-text measure format; raises ValueError with the line number."""
    m1: float | None = None
    atoms: list[tuple[float, float]] = []
    pieces: list[tuple[float, float, float, float]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        kind, args = toks[0], toks[1:]
        if kind == "m1":
            if len(args) != 1:
                raise ValueError(f"line {lineno}: m1 record takes one value")
            if m1 is not None:
                raise ValueError(f"line {lineno}: duplicate m1 record")
            m1 = _parse_float(args[0], lineno)
        elif kind == "atom":
            if len(args) != 2:
                raise ValueError(f"line {lineno}: atom record takes mass and weight")
            atoms.append((_parse_float(args[0], lineno), _parse_float(args[1], lineno)))
        elif kind == "piece":
            if len(args) != 4:
                raise ValueError(
                    f"line {lineno}: piece record takes m_lo, m_hi, amplitude, exponent"
                )
            pieces.append(tuple(_parse_float(a, lineno) for a in args))
        else:
            raise ValueError(f"line {lineno}: unknown record type {kind!r}")
    if m1 is None:
        raise ValueError("missing m1 record")
    try:
        return MassSpectralMeasure(atoms=atoms, pieces=pieces, m1=m1)
    except ValueError as exc:
        raise ValueError(f"invalid measure: {exc}") from exc


def read_measure(path: Union[str, Path]) -> MassSpectralMeasure:
    return parse_measure(Path(path).read_text())


def write_measure(measure: MassSpectralMeasure, path: Union[str, Path]) -> None:
    Path(path).write_text(format_measure(measure))
