"""Generalized Bloch vector and the two-point Ramsey bound on GHZ coherence.

The reduced model keeps three levels: the two GHZ components ``alpha`` and
``beta`` plus one level ``other`` collecting all remaining population.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import EvolveSettings, HamiltonianTerms, evolve
from .observables import GhzTarget, ghz_elements
from .pulses import PulseShape

ALPHA, BETA, OTHER = 0, 1, 2


class ChannelError(ValueError):
    pass


@dataclass(frozen=True)
class BlochVector4:
    s_x: float
    s_y: float
    s_alpha: float
    s_beta: float

    def as_array(self) -> np.ndarray:
        return np.array([self.s_x, self.s_y, self.s_alpha, self.s_beta])

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.as_array()))

    @property
    def coherence(self) -> float:
        """``|rho_ab|`` recovered from the transverse components."""
        return math.sqrt(0.5 * (self.s_x**2 + self.s_y**2))


@dataclass(frozen=True, eq=False)
class ReducedGhzState:
    rho: np.ndarray

    def __post_init__(self):
        rho = np.array(self.rho, dtype=complex)
        if rho.shape != (3, 3):
            raise ValueError("reduced state must be 3x3")
        if not np.allclose(rho, rho.conj().T, atol=1e-12):
            raise ValueError("reduced state must be Hermitian")
        if abs(np.trace(rho).real - 1.0) > 1e-12:
            raise ValueError("reduced state must have unit trace")
        if np.linalg.eigvalsh(rho).min() < -1e-10:
            raise ValueError("reduced state must be positive semidefinite")
        object.__setattr__(self, "rho", rho)

    @classmethod
    def pure(cls, a: complex, b: complex, c: complex = 0.0) -> "ReducedGhzState":
        v = np.array([a, b, c], dtype=complex)
        v /= np.linalg.norm(v)
        return cls(np.outer(v, v.conj()))

    @classmethod
    def ghz(cls, phase: float = 0.0) -> "ReducedGhzState":
        return cls.pure(1.0, np.exp(1j * phase))

    @classmethod
    def random(cls, rng: np.random.Generator, rank: int = 3) -> "ReducedGhzState":
        g = rng.normal(size=(3, rank)) + 1j * rng.normal(size=(3, rank))
        rho = g @ g.conj().T
        rho /= np.trace(rho).real
        return cls(0.5 * (rho + rho.conj().T))


def bloch_vector(state, target: GhzTarget | None = None) -> BlochVector4:
    """Components ``(S_x, S_y, S_alpha, S_beta)``.

    ``state`` is a :class:`ReducedGhzState` or a pure lattice state vector
    (which then needs ``target``).
    """
    if isinstance(state, ReducedGhzState):
        raa = state.rho[ALPHA, ALPHA].real
        rbb = state.rho[BETA, BETA].real
        rab = state.rho[ALPHA, BETA]
    else:
        if target is None:
            raise ValueError("a lattice state needs a GHZ target")
        raa, rbb, rab = ghz_elements(np.asarray(state), target)
    # S_x = Tr[rho Sigma_x] = sqrt(2) Re rho_ab, S_y = Tr[rho Sigma_y] = sqrt(2) Im rho_ab
    return BlochVector4(
        float(math.sqrt(2.0) * rab.real),
        float(math.sqrt(2.0) * rab.imag),
        float(raa),
        float(rbb),
    )


@dataclass(frozen=True)
class CoherenceBound:
    #: lower bound on ``2 |rho_ab(t_i)|**2``
    bound: float
    #: implied lower bound on ``|rho_ab(t_i)|``
    min_coherence: float
    raw: float


def coherence_lower_bound(populations_ti, populations_tf) -> CoherenceBound:
    """Ramsey bound from the GHZ-component populations at two times."""
    (a_i, b_i), (a_f, b_f) = populations_ti, populations_tf
    for p in (a_i, b_i, a_f, b_f):
        if not -1e-12 <= p <= 1 + 1e-12:
            raise ValueError(f"population {p} outside [0, 1]")
    raw = a_f**2 + b_f**2 - a_i**2 - b_i**2
    bound = max(0.0, raw)
    return CoherenceBound(bound, math.sqrt(bound / 2.0), raw)


# --- channels -------------------------------------------------------------


@dataclass(frozen=True)
class Coupling:
    """Rotation by ``theta`` inside span{alpha, beta} about an equatorial axis at ``phase``."""

    theta: float
    phase: float = 0.0


@dataclass(frozen=True)
class Dephasing:
    gamma: float


@dataclass(frozen=True)
class Decay:
    """Loss from alpha (and beta) into ``other`` with probability ``gamma`` (``gamma_beta``)."""

    gamma: float
    gamma_beta: float | None = None


@dataclass(frozen=True)
class OtherUnitary:
    """Any dynamics confined to ``other``; a phase in the three-level model."""

    phase: float = 0.0


def coupling_unitary(theta: float, phase: float = 0.0) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([
        [c, -1j * np.exp(-1j * phase) * s],
        [-1j * np.exp(1j * phase) * s, c],
    ])


def _check_gamma(g):
    if not 0.0 <= g <= 1.0:
        raise ChannelError(f"gamma must lie in [0, 1], got {g}")


def apply_channel(state: ReducedGhzState, channel) -> ReducedGhzState:
    rho = state.rho
    if isinstance(channel, Coupling):
        u = np.eye(3, dtype=complex)
        u[:2, :2] = coupling_unitary(channel.theta, channel.phase)
        out = u @ rho @ u.conj().T
    elif isinstance(channel, Dephasing):
        _check_gamma(channel.gamma)
        # equal dephasing of all three levels keeps the map completely positive
        keep = 1.0 - channel.gamma
        mask = np.full((3, 3), keep)
        np.fill_diagonal(mask, 1.0)
        out = rho * mask
    elif isinstance(channel, Decay):
        ga = channel.gamma
        gb = channel.gamma if channel.gamma_beta is None else channel.gamma_beta
        _check_gamma(ga)
        _check_gamma(gb)
        k0 = np.diag([math.sqrt(1 - ga), math.sqrt(1 - gb), 1.0]).astype(complex)
        ka = np.zeros((3, 3), complex)
        ka[OTHER, ALPHA] = math.sqrt(ga)
        kb = np.zeros((3, 3), complex)
        kb[OTHER, BETA] = math.sqrt(gb)
        out = sum(k @ rho @ k.conj().T for k in (k0, ka, kb))
    elif isinstance(channel, OtherUnitary):
        u = np.diag([1.0, 1.0, np.exp(1j * channel.phase)])
        out = u @ rho @ u.conj().T
    else:
        raise ChannelError(f"unknown channel {channel!r}")
    return ReducedGhzState(0.5 * (out + out.conj().T))


def random_channel(rng: np.random.Generator):
    kind = rng.integers(4)
    if kind == 0:
        return Coupling(rng.uniform(-np.pi, np.pi), rng.uniform(0, 2 * np.pi))
    if kind == 1:
        return Dephasing(rng.uniform(0, 1))
    if kind == 2:
        if rng.random() < 0.5:
            return Decay(rng.uniform(0, 1))
        return Decay(rng.uniform(0, 1), rng.uniform(0, 1))
    return OtherUnitary(rng.uniform(0, 2 * np.pi))


# --- Ramsey protocol on the lattice ----------------------------------------


def optimal_ramsey_phase(a: complex, b: complex) -> float:
    """Coupling phase for which a pi/2 rotation moves the most population into alpha."""
    if a == 0 or b == 0:
        return 0.0
    return float(np.angle(b) - np.angle(a) - np.pi / 2)


def rotate_ghz_subspace(state, target: GhzTarget, theta: float, phase: float = 0.0) -> np.ndarray:
    out = np.array(state, dtype=complex)
    i, j = target.alpha_index, target.beta_index
    u = coupling_unitary(theta, phase)
    out[i], out[j] = u[0, 0] * state[i] + u[0, 1] * state[j], u[1, 0] * state[i] + u[1, 1] * state[j]
    return out


@dataclass(frozen=True)
class RamseyResult:
    bound: CoherenceBound
    true_coherence: float
    populations_ti: tuple[float, float]
    populations_tf: tuple[float, float]
    theta: float
    phase: float


def ramsey_from_state(state, target: GhzTarget, theta: float, phase: float | None = None) -> RamseyResult:
    """Two-point Ramsey estimate for a prepared lattice state.

    ``phase=None`` selects the phase that maximizes the population transfer.
    """
    state = np.asarray(state)
    a, b = state[target.alpha_index], state[target.beta_index]
    if phase is None:
        phase = optimal_ramsey_phase(a, b)
    pops_i = (float(abs(a) ** 2), float(abs(b) ** 2))
    after = rotate_ghz_subspace(state, target, theta, phase)
    pops_f = (float(abs(after[target.alpha_index]) ** 2), float(abs(after[target.beta_index]) ** 2))
    return RamseyResult(
        coherence_lower_bound(pops_i, pops_f), float(abs(np.conj(a) * b)),
        pops_i, pops_f, float(theta), float(phase),
    )


def ramsey_bound_experiment(terms: HamiltonianTerms, pulse: PulseShape, target: GhzTarget,
                            theta: float, settings: EvolveSettings = EvolveSettings(),
                            phase: float | None = None, initial=None) -> RamseyResult:
    """Prepare with ``pulse``, then read out the bound through a Ramsey rotation."""
    psi = evolve(terms, pulse, settings, initial).final
    return ramsey_from_state(psi, target, theta, phase)
