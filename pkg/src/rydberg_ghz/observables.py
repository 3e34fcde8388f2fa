"""Fidelity, spectra, level diagrams and entanglement entropy."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import CapacityError, HamiltonianTerms, dense_hamiltonian
from .lattice import LatticeSpec, bitmask_to_index, neel_bitmask

SPECTRUM_MAX_QUBITS = 12
ENTROPY_CUTOFF = 1e-14


class ParallelLinesError(ValueError):
    """Two level lines share a slope and never cross."""


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class GhzTarget:
    """Basis indices of the two product components of a GHZ state."""

    alpha_index: int
    beta_index: int
    name: str = ""

    def __post_init__(self):
        if self.alpha_index == self.beta_index:
            raise ValueError("GHZ components must differ")
        if min(self.alpha_index, self.beta_index) < 0:
            raise ValueError("basis indices must be non-negative")

    def check(self, dim: int):
        if max(self.alpha_index, self.beta_index) >= dim:
            raise ValueError(f"target indices out of range for dimension {dim}")

    def state(self, n_qubits: int, phase: float = 0.0) -> np.ndarray:
        psi = np.zeros(1 << n_qubits, dtype=complex)
        psi[self.alpha_index] = 1 / np.sqrt(2)
        psi[self.beta_index] = np.exp(1j * phase) / np.sqrt(2)
        return psi


def phi_target(n_qubits: int) -> GhzTarget:
    """All atoms down / all atoms up."""
    return GhzTarget(0, (1 << n_qubits) - 1, "phi")


def psi_target(spec: LatticeSpec) -> GhzTarget:
    """Neel / anti-Neel checkerboard components."""
    alpha = bitmask_to_index(neel_bitmask(spec))
    return GhzTarget(alpha, ((1 << spec.n_sites) - 1) ^ alpha, "psi")


def make_target(kind: str, spec: LatticeSpec) -> GhzTarget:
    if kind == "phi":
        return phi_target(spec.n_sites)
    if kind == "psi":
        if spec.n_sites < 2:
            raise ValueError("the Neel target needs at least two atoms")
        return psi_target(spec)
    raise ValueError(f"unknown target kind {kind!r}")


def fidelity_from_elements(rho_aa: float, rho_bb: float, rho_ab: complex) -> float:
    """Phase-optimized GHZ fidelity from the three relevant density-matrix entries."""
    return float(min(1.0, 0.5 * (rho_aa + rho_bb) + abs(rho_ab)))


def ghz_elements(state, target: GhzTarget):
    """``(rho_aa, rho_bb, rho_ab)`` of a pure state."""
    a = state[target.alpha_index]
    b = state[target.beta_index]
    return abs(a) ** 2, abs(b) ** 2, a * np.conj(b)


def fidelity(state, target: GhzTarget) -> float:
    state = np.asarray(state)
    target.check(state.shape[-1])
    return fidelity_from_elements(*ghz_elements(state, target))


@dataclass(frozen=True, eq=False)
class SpectrumSnapshot:
    time: float
    energies: np.ndarray
    magnetizations: np.ndarray
    populations: np.ndarray


def instantaneous_spectrum(terms: HamiltonianTerms, omega: float, delta: float, state,
                           time: float = 0.0) -> SpectrumSnapshot:
    """Full eigendecomposition of the frozen Hamiltonian.

    Populations inside a degenerate eigenspace refer to whichever basis the
    eigensolver returns.
    """
    if terms.n_qubits > SPECTRUM_MAX_QUBITS:
        raise CapacityError(
            f"dense spectrum limited to {SPECTRUM_MAX_QUBITS} atoms; "
            "use fewer snapshot times or a smaller lattice"
        )
    h = dense_hamiltonian(terms, omega, delta)
    energies, vecs = np.linalg.eigh(h)
    weights = np.abs(vecs) ** 2
    magnetizations = terms.m.astype(float) @ weights
    populations = np.abs(vecs.conj().T @ np.asarray(state)) ** 2
    return SpectrumSnapshot(float(time), energies, magnetizations, populations)


@dataclass(frozen=True, eq=False)
class LevelDiagram:
    """Zero-drive energies ``E_b(delta) = intercept_b + slope_b * delta``."""

    deltas: np.ndarray
    slopes: np.ndarray
    intercepts: np.ndarray
    energies: np.ndarray  # shape (len(deltas), 2**N)


def level_diagram(terms: HamiltonianTerms, delta_grid) -> LevelDiagram:
    deltas = np.asarray(delta_grid, dtype=float)
    slopes = -terms.m.astype(float)
    intercepts = terms.d0.copy()
    energies = intercepts[None, :] + deltas[:, None] * slopes[None, :]
    return LevelDiagram(deltas, slopes, intercepts, energies)


def find_crossing(terms: HamiltonianTerms, b1: int, b2: int) -> float:
    """Detuning at which two zero-drive levels are degenerate."""
    m1, m2 = int(terms.m[b1]), int(terms.m[b2])
    if m1 == m2:
        raise ParallelLinesError(f"states {b1} and {b2} both have magnetization {m1}")
    return float((terms.d0[b1] - terms.d0[b2]) / (m1 - m2))


def entanglement_entropy(state, partition, n_qubits: int | None = None) -> float:
    """von Neumann entropy in bits of the atoms in ``partition``."""
    state = np.asarray(state)
    if n_qubits is None:
        n_qubits = int(round(np.log2(state.shape[0])))
    if state.shape != (1 << n_qubits,):
        raise ValueError("state size does not match the number of atoms")
    part = sorted(set(int(i) for i in partition))
    if not part or len(part) >= n_qubits:
        raise PartitionError("partition must be a nonempty proper subset of the atoms")
    if part[0] < 0 or part[-1] >= n_qubits:
        raise PartitionError(f"partition {part} out of range for {n_qubits} atoms")
    rest = [i for i in range(n_qubits) if i not in part]
    # reshape puts atom i on axis n-1-i (little-endian basis index)
    tensor = state.reshape((2,) * n_qubits)
    axes = [n_qubits - 1 - i for i in part] + [n_qubits - 1 - i for i in rest]
    mat = np.transpose(tensor, axes).reshape(1 << len(part), -1)
    schmidt = np.linalg.svd(mat, compute_uv=False)
    p = schmidt**2
    p = p[p > ENTROPY_CUTOFF]
    return float(-np.sum(p * np.log2(p)))


def half_partition(n_qubits: int):
    """Atoms ``0 .. N/2 - 1`` (rounded down, at least one)."""
    return list(range(max(1, n_qubits // 2)))
