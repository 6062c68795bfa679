import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from isingspec.measures import MassSpectralMeasure


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260822)


@pytest.fixture(scope="session")
def unit_atom():
    return MassSpectralMeasure(m1=1.0, atoms=[(1.0, 1.0)])


@pytest.fixture(scope="session")
def two_atoms():
    return MassSpectralMeasure(m1=1.0, atoms=[(1.0, 1.0), (1.8, 0.5)])


@pytest.fixture(scope="session")
def atom_plus_piece():
    return MassSpectralMeasure(m1=1.0, atoms=[(1.0, 1.0)],
                               pieces=[(2.0, 5.0, 0.3, -1.2)])


@pytest.fixture(scope="session")
def scale_free():
    """Spectral form of the pure power measure m^{-3/4} dm on [1, inf)."""
    return MassSpectralMeasure(m1=1.0, pieces=[(1.0, np.inf, 1.0, -0.75)])


@pytest.fixture(scope="session")
def scale_free_rho():
    """Covariance form m^{-7/4} dm on [1, inf), used directly as rho."""
    return MassSpectralMeasure(m1=1.0, pieces=[(1.0, np.inf, 1.0, -1.75)])


def measure_to_tuples(measure):
    """(atoms, pieces) tuples for the quadrature oracles."""
    atoms = [(a.mass, a.weight) for a in measure.atoms]
    pieces = [(p.m_lo, p.m_hi, p.amplitude, p.exponent)
              for p in measure.pieces]
    return atoms, pieces
