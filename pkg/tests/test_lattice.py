import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rydberg_ghz.lattice import (
    C6_50S, InvalidGeometryError, InvalidSpecError, LatticeSpec, bitmask_to_index, build_positions,
    interaction_matrix, lattice_interactions, neel_bitmask,
)


def test_two_site_chain_positions():
    pos = build_positions(LatticeSpec((2,), 1.5))
    np.testing.assert_allclose(pos, [[0, 0, 0], [1.5e-6, 0, 0]], atol=0)


def test_single_site_at_origin():
    pos = build_positions(LatticeSpec((1,)))
    assert pos.shape == (1, 3)
    assert np.all(pos == 0)


def test_square_plaquette_diagonal():
    pos = build_positions(LatticeSpec((2, 2), 1.5))
    assert len(pos) == 4
    d = np.linalg.norm(pos[0] - pos[3])
    assert d == pytest.approx(np.sqrt(2) * 1.5e-6, rel=1e-14)


@pytest.mark.parametrize("extents", [(0,), (2, 0), (3, 1, 0), (), (1, 1, 1, 1)])
def test_invalid_extents(extents):
    with pytest.raises(InvalidSpecError):
        LatticeSpec(extents)


def test_invalid_spacing_and_c6():
    with pytest.raises(InvalidSpecError):
        LatticeSpec((2,), spacing=0.0)
    with pytest.raises(InvalidSpecError):
        LatticeSpec((2,), c6=-1.0)


def test_pair_coupling_value():
    table = lattice_interactions(LatticeSpec((2,), 1.5, 1.56e-26))
    expected = 1.56e-26 / (1.5e-6) ** 6
    assert table.v[0, 1] == pytest.approx(expected, rel=1e-14)
    assert table.v[0, 1] == pytest.approx(1.3696e9, rel=1e-4)
    assert table.v0 == table.v[0, 1]
    np.testing.assert_allclose(table.kappa, [expected, expected])


def test_single_atom_table():
    table = lattice_interactions(LatticeSpec((1,)))
    assert table.v.shape == (1, 1)
    assert table.v[0, 0] == 0
    assert table.v0 == 0


def test_plaquette_diagonal_is_v0_over_8():
    table = lattice_interactions(LatticeSpec((2, 2)))
    assert table.v[0, 3] == pytest.approx(table.v0 / 8, rel=1e-12)
    assert table.v[1, 2] == pytest.approx(table.v0 / 8, rel=1e-12)


def test_duplicate_positions_rejected():
    with pytest.raises(InvalidGeometryError):
        interaction_matrix([[0, 0, 0], [1e-6, 0, 0], [0, 0, 0]], C6_50S)


def test_table_symmetry_and_diagonal():
    table = lattice_interactions(LatticeSpec((2, 2, 3)))
    assert np.array_equal(table.v, table.v.T)
    assert np.all(np.diag(table.v) == 0)
    assert np.all(table.v >= 0)
    iu = np.triu_indices(table.n, 1)
    assert table.v0 == table.v[iu].max()


@pytest.mark.parametrize("extents", [(12,), (3, 4), (2, 2, 3)])
def test_kappa_is_row_sum(extents):
    table = lattice_interactions(LatticeSpec(extents))
    np.testing.assert_allclose(table.kappa, table.v.sum(axis=1), rtol=1e-12)


def test_doubling_spacing_divides_by_64():
    a = lattice_interactions(LatticeSpec((3, 2), 1.5))
    b = lattice_interactions(LatticeSpec((3, 2), 3.0))
    off = ~np.eye(6, dtype=bool)
    np.testing.assert_allclose(b.v[off] * 64, a.v[off], rtol=1e-13)


@settings(max_examples=30, deadline=None)
@given(st.permutations(list(range(6))))
def test_permutation_equivariance(perm):
    pos = build_positions(LatticeSpec((2, 3)))
    base = interaction_matrix(pos)
    permuted = interaction_matrix(pos[list(perm)])
    np.testing.assert_allclose(permuted.v, base.v[np.ix_(perm, perm)], rtol=1e-14)


def test_neel_chain():
    assert neel_bitmask(LatticeSpec((4,))) == "0101"


def test_neel_plaquette_row_major():
    assert neel_bitmask(LatticeSpec((2, 2))) == "0110"


def test_neel_complement_3d():
    spec = LatticeSpec((2, 2, 3))
    mask = neel_bitmask(spec)
    coords = spec.grid_coordinates()
    flipped = "".join("1" if c == "0" else "0" for c in mask)
    # complement is the checkerboard with the other parity
    assert flipped == "".join(str((s + 1) % 2) for s in coords.sum(axis=1))
    assert bitmask_to_index(mask) ^ bitmask_to_index(flipped) == (1 << 12) - 1


def test_neel_nearest_neighbours_differ():
    spec = LatticeSpec((3, 4))
    mask = neel_bitmask(spec)
    coords = spec.grid_coordinates()
    for i, j in itertools.combinations(range(spec.n_sites), 2):
        if np.abs(coords[i] - coords[j]).sum() == 1:
            assert mask[i] != mask[j]
