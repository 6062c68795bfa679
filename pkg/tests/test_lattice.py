import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isingspec.lattice import (LatticeSpec, aligned_configuration,
                               block_site_count, critical_coupling,
                               metropolis_sweep, random_configuration,
                               read_snapshot, reduced_energy,
                               wolff_ghost_update, write_snapshot)

from oracles import CRITICAL_BETA_J


def test_critical_coupling_value():
    assert critical_coupling() == pytest.approx(CRITICAL_BETA_J, rel=1e-15)


def test_spec_validation():
    with pytest.raises(ValueError):
        LatticeSpec(n=1, h=0.0)
    with pytest.raises(ValueError):
        LatticeSpec(n=8, h=-1.0)
    spec = LatticeSpec(n=8, h=0.0)
    assert spec.a == pytest.approx(1.0 / 8.0)


def test_field_renormalization_exponent():
    spec = LatticeSpec(n=16, h=3.0)
    assert spec.h_lat == pytest.approx(3.0 * (1.0 / 16.0) ** (15.0 / 8.0))
    # Doubling the resolution at fixed h shrinks the lattice field by
    # the 15/8 power of the spacing ratio.
    fine = LatticeSpec(n=32, h=3.0)
    assert fine.h_lat / spec.h_lat == pytest.approx(0.5 ** (15.0 / 8.0))


def test_from_lattice_field_round_trip():
    spec = LatticeSpec.from_lattice_field(n=16, h_lat=0.25)
    assert spec.h_lat == pytest.approx(0.25)
    assert LatticeSpec(n=16, h=spec.h).h_lat == pytest.approx(0.25)


def test_reduced_energy_against_direct_sum():
    spec = LatticeSpec(n=6, h=1.3)
    config = random_configuration(spec, seed=4)
    s = config.spins
    bond = float((s * np.roll(s, -1, 0)).sum() + (s * np.roll(s, -1, 1)).sum())
    expect = -spec.beta_j * bond - spec.h_lat * float(s.sum())
    assert reduced_energy(config, spec) == pytest.approx(expect, rel=1e-12)


def test_updates_preserve_state_space():
    spec = LatticeSpec(n=8, h=2.0)
    config = random_configuration(spec, seed=1)
    for _ in range(5):
        metropolis_sweep(config, spec)
        wolff_ghost_update(config, spec)
    assert set(np.unique(config.spins)) <= {-1, 1}
    assert config.spins.shape == (8, 8)
    assert config.sweep_count > 0


def test_aligned_start_is_all_up():
    spec = LatticeSpec(n=4, h=1.0)
    config = aligned_configuration(spec)
    assert np.all(config.spins == 1)
    assert config.magnetization() == pytest.approx(1.0)


def test_chain_key_separates_streams():
    spec = LatticeSpec(n=8, h=0.0)
    a = random_configuration(spec, seed=3, chain_index=0)
    b = random_configuration(spec, seed=3, chain_index=1)
    c = random_configuration(spec, seed=3, chain_index=0)
    assert not np.array_equal(a.spins, b.spins)
    assert np.array_equal(a.spins, c.spins)


def test_block_site_count():
    # Square of side 3a centered at the origin covers a 3-by-3 site patch.
    assert block_site_count(a=0.5, side=1.5) == 9
    # Count scales like (side/a)^2 as the mesh refines.
    assert block_site_count(a=1e-3, side=1.0) == pytest.approx(1e6, rel=1e-2)


def test_snapshot_round_trip(tmp_path):
    spec = LatticeSpec(n=12, h=0.5)
    config = random_configuration(spec, seed=9)
    config.sweep_count = 77
    path = tmp_path / "state.snap"
    write_snapshot(path, config)
    back = read_snapshot(path)
    assert np.array_equal(back.spins, config.spins)
    assert back.n == 12
    assert back.sweep_count == 77


def test_snapshot_rejects_corrupt_magic(tmp_path):
    path = tmp_path / "bad.snap"
    path.write_bytes(b"XXXX" + b"\0" * 12)
    with pytest.raises(ValueError):
        read_snapshot(path)


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=2, max_value=9), st.integers(min_value=0,
                                                          max_value=2 ** 31))
def test_snapshot_round_trip_random(tmp_path_factory, n, seed):
    spec = LatticeSpec(n=n, h=0.0)
    config = random_configuration(spec, seed=seed)
    path = tmp_path_factory.mktemp("snap") / "s.snap"
    write_snapshot(path, config)
    assert np.array_equal(read_snapshot(path).spins, config.spins)


def test_wolff_at_strong_field_raises_magnetization():
    # The ghost bonds at strong field must drive the system toward the
    # field direction, not away from it.
    spec = LatticeSpec.from_lattice_field(n=16, h_lat=0.5)
    config = random_configuration(spec, seed=11)
    wolff_ghost_update(config, spec, n_updates=60)
    assert config.magnetization() > 0.5
