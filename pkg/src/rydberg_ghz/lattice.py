"""Regular Rydberg lattices and their van der Waals coupling tables."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

#: van der Waals coefficient of the 50S state, in Hz m^6
C6_50S = 1.56e-26
#: default lattice spacing in micrometers
DEFAULT_SPACING_UM = 1.5

MICROMETER = 1e-6


class InvalidSpecError(ValueError):
    """Raised for malformed lattice specifications."""


class InvalidGeometryError(ValueError):
    """Raised when positions cannot produce a finite coupling table."""


@dataclass(frozen=True)
class LatticeSpec:
    """Axis-aligned lattice with open boundaries.

    Parameters
    ----------
    extents : tuple of int
        Sites per axis, one to three entries.
    spacing : float
        Lattice spacing in micrometers.
    c6 : float
        van der Waals coefficient in Hz m^6.
    """

    extents: tuple[int, ...]
    spacing: float = DEFAULT_SPACING_UM
    c6: float = C6_50S

    def __post_init__(self):
        extents = tuple(int(e) for e in self.extents)
        object.__setattr__(self, "extents", extents)
        if not 1 <= len(extents) <= 3:
            raise InvalidSpecError(f"extents must have 1 to 3 axes, got {len(extents)}")
        if any(e < 1 for e in extents):
            raise InvalidSpecError(f"every extent must be positive, got {extents}")
        if not self.spacing > 0:
            raise InvalidSpecError(f"spacing must be positive, got {self.spacing}")
        if not self.c6 > 0:
            raise InvalidSpecError(f"c6 must be positive, got {self.c6}")

    @property
    def n_sites(self) -> int:
        return int(np.prod(self.extents))

    @property
    def dimension(self) -> int:
        return len(self.extents)

    def grid_coordinates(self) -> np.ndarray:
        """Integer grid coordinates of every site, row-major (last axis fastest)."""
        coords = np.array(list(itertools.product(*(range(e) for e in self.extents))), dtype=int)
        return coords.reshape(self.n_sites, self.dimension)


@dataclass(frozen=True, eq=False)
class InteractionTable:
    """Pairwise couplings ``V_ij = C6 / |r_i - r_j|^6`` in Hz."""

    n: int
    v: np.ndarray
    v0: float
    kappa: np.ndarray = field(repr=False)

    @property
    def total(self) -> float:
        """Sum of ``V_ij`` over unordered pairs."""
        return float(np.sum(np.triu(self.v, 1)))


def build_positions(spec: LatticeSpec) -> np.ndarray:
    """Site positions in meters as an ``(N, 3)`` array; unused axes are zero."""
    grid = spec.grid_coordinates().astype(float)
    positions = np.zeros((spec.n_sites, 3))
    positions[:, : spec.dimension] = grid * spec.spacing * MICROMETER
    return positions


def interaction_matrix(positions, c6: float = C6_50S) -> InteractionTable:
    positions = np.asarray(positions, dtype=float)
    if positions.ndim != 2:
        raise InvalidGeometryError("positions must be a 2D array of coordinates")
    n = positions.shape[0]
    if n == 0:
        raise InvalidGeometryError("at least one site is required")
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.sqrt(np.sum(diff**2, axis=-1))
    off = ~np.eye(n, dtype=bool)
    if np.any(dist[off] == 0.0):
        i, j = np.argwhere((dist == 0.0) & off)[0]
        raise InvalidGeometryError(f"sites {i} and {j} coincide")
    v = np.zeros((n, n))
    v[off] = c6 / dist[off] ** 6
    v = 0.5 * (v + v.T)
    v0 = float(v.max()) if n > 1 else 0.0
    return InteractionTable(n=n, v=v, v0=v0, kappa=v.sum(axis=1))


def lattice_interactions(spec: LatticeSpec) -> InteractionTable:
    return interaction_matrix(build_positions(spec), spec.c6)


def neel_bitmask(spec: LatticeSpec) -> str:
    """Checkerboard pattern: character ``i`` is the coordinate parity of site ``i``."""
    parity = spec.grid_coordinates().sum(axis=1) % 2
    return "".join(str(int(p)) for p in parity)


def bitmask_to_index(mask: str) -> int:
    """Basis index with character ``i`` of ``mask`` as bit ``i``."""
    return sum(1 << i for i, c in enumerate(mask) if c == "1")
