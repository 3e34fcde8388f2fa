"""Ising Hamiltonian in the computational basis and Krylov time propagation.

Basis convention: index ``b`` has bit ``i`` set when atom ``i`` is in the
Rydberg state (spin up); bit 0 belongs to atom 0. The Hamiltonian is

    H = diag(d0 - delta * m) + omega * sum_i sigma_x^i

with the drive term taken without a factor 1/2.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .lattice import InteractionTable
from .pulses import HZ_TO_RAD_PER_US, PulseShape

MAX_QUBITS = 16


class CapacityError(ValueError):
    """Raised when a lattice is too large for the requested operation."""


class PropagationError(RuntimeError):
    """Raised when the Krylov propagator cannot reach its tolerance."""

    def __init__(self, message, *, step=None, time=None, error=None):
        super().__init__(message)
        self.step = step
        self.time = time
        self.error = error


@dataclass(frozen=True, eq=False)
class HamiltonianTerms:
    """Diagonal structure of the Hamiltonian, rad/us."""

    n_qubits: int
    d0: np.ndarray
    m: np.ndarray

    @property
    def dim(self) -> int:
        return 1 << self.n_qubits

    def diagonal(self, delta: float) -> np.ndarray:
        return self.d0 - delta * self.m


@dataclass(frozen=True)
class EvolveSettings:
    n_steps: int = 1000
    krylov_dim_max: int = 30
    krylov_tol: float = 1e-10
    #: record every ``record_stride`` segments; ``0`` keeps only the endpoints
    record_stride: int = 0
    #: halvings of a segment allowed before giving up
    max_subdivisions: int = 12

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not self.krylov_tol > 0:
            raise ValueError("krylov_tol must be positive")
        if self.krylov_dim_max < 2:
            raise ValueError("krylov_dim_max must be >= 2")
        if self.record_stride < 0:
            raise ValueError("record_stride must be >= 0")


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def spin_signs(n_qubits: int) -> np.ndarray:
    """``(2**n, n)`` array of +-1 with ``s[b, i] = +1`` when bit ``i`` of ``b`` is set."""
    b = np.arange(1 << n_qubits)[:, None]
    return 2 * ((b >> np.arange(n_qubits)) & 1) - 1


def build_hamiltonian(interactions: InteractionTable, max_qubits: int = MAX_QUBITS) -> HamiltonianTerms:
    n = interactions.n
    if n > max_qubits:
        raise CapacityError(f"{n} atoms exceed the limit of {max_qubits}")
    v = interactions.v * HZ_TO_RAD_PER_US
    kappa = interactions.kappa * HZ_TO_RAD_PER_US
    s = spin_signs(n).astype(float)
    d0 = s @ kappa + 0.5 * np.einsum("bi,ij,bj->b", s, v, s)
    m = s.sum(axis=1).astype(np.int64)
    return HamiltonianTerms(n_qubits=n, d0=d0, m=m)


def all_down(n_qubits: int) -> np.ndarray:
    psi = np.zeros(1 << n_qubits, dtype=complex)
    psi[0] = 1.0
    return psi


def apply_hamiltonian(terms: HamiltonianTerms, omega: float, delta: float, state) -> np.ndarray:
    state = np.asarray(state, dtype=complex)
    if state.shape != (terms.dim,):
        raise ValueError(f"state has shape {state.shape}, expected ({terms.dim},)")
    out = terms.diagonal(delta) * state
    idx = np.arange(terms.dim)
    for i in range(terms.n_qubits):
        out += omega * state[idx ^ (1 << i)]
    return out


def dense_hamiltonian(terms: HamiltonianTerms, omega: float, delta: float) -> np.ndarray:
    h = np.diag(terms.diagonal(delta)).astype(complex)
    idx = np.arange(terms.dim)
    for i in range(terms.n_qubits):
        h[idx ^ (1 << i), idx] += omega
    return h


# --- compiled kernels -------------------------------------------------------


@numba.njit(cache=True, nogil=True)
def _matvec(diag, omega, n, v, out):
    dim = v.shape[0]
    for b in range(dim):
        acc = diag[b] * v[b]
        for i in range(n):
            acc += omega * v[b ^ (1 << i)]
        out[b] = acc


@numba.njit(cache=True, nogil=True)
def _bessel_j(x, kmax):
    """``J_0(x) .. J_kmax(x)`` by Miller's downward recurrence, ``x >= 0``."""
    out = np.zeros(kmax + 1)
    if x < 1e-8:
        # leading series terms; the downward recurrence would overflow here
        out[0] = 1.0 - 0.25 * x * x
        term = 0.5 * x
        for k in range(1, kmax + 1):
            out[k] = term
            term *= 0.5 * x / (k + 1)
        if kmax >= 1:
            out[1] -= x ** 3 / 16.0
        return out
    start = kmax + 20 + int(x) + 2 * int(x ** (1.0 / 3.0) + 1)
    start += start % 2
    j_next = 0.0
    j_cur = 1e-300
    norm = 0.0
    for k in range(start, 0, -1):
        j_prev = 2.0 * k / x * j_cur - j_next
        j_next = j_cur
        j_cur = j_prev
        if abs(j_cur) > 1e250:
            j_cur *= 1e-250
            j_next *= 1e-250
            norm *= 1e-250
            for q in range(kmax + 1):
                out[q] *= 1e-250
        if k - 1 <= kmax:
            out[k - 1] = j_cur
        if (k - 1) % 2 == 0 and k - 1 > 0:
            norm += 2.0 * j_cur
    norm += j_cur
    for q in range(kmax + 1):
        out[q] /= norm
    return out


@numba.njit(cache=True, nogil=True)
def _tridiag_expm_column(alpha, beta, m, dt):
    """``exp(-i dt T) e_1`` for the leading ``m x m`` block of a real tridiagonal T.

    Chebyshev expansion with Bessel coefficients on Gershgorin bounds of T.
    """
    if m == 1:
        out = np.empty(1, dtype=np.complex128)
        out[0] = np.exp(-1j * dt * alpha[0])
        return out
    lo = np.inf
    hi = -np.inf
    for k in range(m):
        rad = 0.0
        if k > 0:
            rad += abs(beta[k - 1])
        if k + 1 < m:
            rad += abs(beta[k])
        lo = min(lo, alpha[k] - rad)
        hi = max(hi, alpha[k] + rad)
    center = 0.5 * (hi + lo)
    half = 0.5 * (hi - lo) + 1e-300
    x = dt * half
    kmax = int(x + 10.0 * (x + 1.0) ** (1.0 / 3.0) + 20.0)
    jk = _bessel_j(x, kmax)
    # T_k((T - center)/half) e_1 via the three-term recurrence
    t_prev = np.zeros(m)
    t_prev[0] = 1.0
    t_cur = np.zeros(m)
    for r in range(m):
        acc = (alpha[r] - center) * t_prev[r]
        if r > 0:
            acc += beta[r - 1] * t_prev[r - 1]
        if r + 1 < m:
            acc += beta[r] * t_prev[r + 1]
        t_cur[r] = acc / half
    out = np.zeros(m, dtype=np.complex128)
    for r in range(m):
        out[r] = jk[0] * t_prev[r]
    phase = -1j
    for r in range(m):
        out[r] += 2.0 * phase * jk[1] * t_cur[r]
    t_next = np.zeros(m)
    for k in range(2, kmax + 1):
        phase *= -1j
        for r in range(m):
            acc = (alpha[r] - center) * t_cur[r]
            if r > 0:
                acc += beta[r - 1] * t_cur[r - 1]
            if r + 1 < m:
                acc += beta[r] * t_cur[r + 1]
            t_next[r] = 2.0 * acc / half - t_prev[r]
        c = 2.0 * phase * jk[k]
        for r in range(m):
            out[r] += c * t_next[r]
        t_prev, t_cur, t_next = t_cur, t_next, t_prev
    g = np.exp(-1j * dt * center)
    for r in range(m):
        out[r] *= g
    return out


@numba.njit(cache=True, nogil=True)
def _lanczos_step(diag, omega, n, psi, dt, mmax, mcheck, tol, basis, alpha, beta, w):
    """One Krylov step ``exp(-i H dt) psi`` in place.

    The residual estimate is first evaluated at dimension ``mcheck`` and
    then every second vector. Returns ``(ok, err, m)``; ``psi`` is
    untouched when ``ok`` is False.
    """
    dim = psi.shape[0]
    nrm = 0.0
    for b in range(dim):
        nrm += psi[b].real ** 2 + psi[b].imag ** 2
    nrm = np.sqrt(nrm)
    for b in range(dim):
        basis[0, b] = psi[b] / nrm
    err = np.inf
    m_used = 0
    col = np.zeros(1, dtype=np.complex128)
    have_col = False
    for j in range(mmax):
        _matvec(diag, omega, n, basis[j], w)
        a = 0.0
        for b in range(dim):
            a += (np.conj(basis[j, b]) * w[b]).real
        alpha[j] = a
        for b in range(dim):
            w[b] -= a * basis[j, b]
        if j > 0:
            bprev = beta[j - 1]
            for b in range(dim):
                w[b] -= bprev * basis[j - 1, b]
        bn = 0.0
        for b in range(dim):
            bn += w[b].real ** 2 + w[b].imag ** 2
        bn = np.sqrt(bn)
        beta[j] = bn
        m = j + 1
        if bn < 1e-14 * max(1.0, abs(a)):
            # invariant subspace: the small exponential is exact
            err = 0.0
            m_used = m
            have_col = False
            break
        if m >= mcheck and ((m - mcheck) % 2 == 0 or m == mmax):
            col = _tridiag_expm_column(alpha, beta, m, dt)
            have_col = True
            err = bn * abs(col[m - 1])
            if err < tol:
                m_used = m
                break
        if m < mmax:
            for b in range(dim):
                basis[m, b] = w[b] / bn
        m_used = m
    if err >= tol:
        return False, err, m_used
    if not have_col or col.shape[0] != m_used:
        col = _tridiag_expm_column(alpha, beta, m_used, dt)
    for b in range(dim):
        acc = 0.0j
        for k in range(m_used):
            acc += basis[k, b] * col[k]
        psi[b] = acc * nrm
    return True, err, m_used


@numba.njit(cache=True, nogil=True)
def _propagate(d0, m, n, omegas, deltas, dt, psi, mmax, tol, max_sub, stride, out):
    """March through all segments; returns (status, failing step, last error)."""
    dim = psi.shape[0]
    basis = np.empty((mmax, dim), dtype=np.complex128)
    alpha = np.empty(mmax)
    beta = np.empty(mmax)
    w = np.empty(dim, dtype=np.complex128)
    diag = np.empty(dim)
    backup = np.empty(dim, dtype=np.complex128)
    n_steps = omegas.shape[0]
    level = 0
    mcheck = 4
    rec = 0
    if stride > 0:
        out[0, :] = psi
        rec = 1
    for step in range(n_steps):
        om = omegas[step]
        de = deltas[step]
        for b in range(dim):
            diag[b] = d0[b] - de * m[b]
        while True:
            nsub = 1 << level
            h = dt / nsub
            backup[:] = psi
            ok = True
            err = 0.0
            for _ in range(nsub):
                ok, err, mu = _lanczos_step(diag, om, n, psi, h, mmax, mcheck, tol, basis, alpha, beta, w)
                if not ok:
                    mcheck = 4
                    break
                mcheck = max(4, min(mu - 2, mmax))
            if ok:
                break
            psi[:] = backup
            level += 1
            if level > max_sub:
                return 1, step, err
        # probe a coarser split now and then; failures cost one wasted attempt
        if level > 0 and step % 16 == 15:
            level -= 1
        if stride > 0 and ((step + 1) % stride == 0 or step + 1 == n_steps):
            out[rec, :] = psi
            rec += 1
    return 0, -1, 0.0


def segment_samples(pulse: PulseShape, n_steps: int):
    """Midpoint samples of the controls for ``n_steps`` equal segments."""
    dt = pulse.duration / n_steps
    mid = (np.arange(n_steps) + 0.5) * dt
    omega, delta = pulse(mid)
    return np.asarray(omega, float), np.asarray(delta, float), dt


def record_times(duration: float, n_steps: int, stride: int) -> np.ndarray:
    if stride <= 0:
        return np.array([0.0, duration])
    steps = list(range(stride, n_steps + 1, stride))
    if not steps or steps[-1] != n_steps:
        steps.append(n_steps)
    return np.array([0.0] + [s * duration / n_steps for s in steps])


def evolve(terms: HamiltonianTerms, pulse: PulseShape, settings: EvolveSettings = EvolveSettings(),
           initial=None) -> Trajectory:
    """Propagate under the pulse with midpoint-sampled piecewise-constant segments.

    Each segment applies ``exp(-i H dt)`` through a Lanczos approximation
    whose dimension grows until the residual estimate drops below
    ``krylov_tol``; segments that do not converge within
    ``krylov_dim_max`` vectors are split in halves.
    """
    psi = all_down(terms.n_qubits) if initial is None else np.array(initial, dtype=complex)
    if psi.shape != (terms.dim,):
        raise ValueError(f"initial state has shape {psi.shape}, expected ({terms.dim},)")
    if abs(np.linalg.norm(psi) - 1.0) > 1e-9:
        raise ValueError("initial state must be normalized")
    omegas, deltas, dt = segment_samples(pulse, settings.n_steps)
    times = record_times(pulse.duration, settings.n_steps, settings.record_stride)
    if settings.record_stride > 0:
        out = np.empty((len(times), terms.dim), dtype=complex)
    else:
        out = np.empty((0, terms.dim), dtype=complex)
    start = psi.copy()
    status, step, err = _propagate(
        terms.d0, terms.m.astype(float), terms.n_qubits, omegas, deltas, dt, psi,
        settings.krylov_dim_max, settings.krylov_tol, settings.max_subdivisions,
        settings.record_stride, out,
    )
    if status != 0:
        raise PropagationError(
            f"Krylov propagation did not reach tol {settings.krylov_tol:g} at segment {step} "
            f"(t = {(step + 0.5) * dt:.6g} us, residual {err:.3g}) with dimension "
            f"{settings.krylov_dim_max} and {settings.max_subdivisions} subdivisions",
            step=step, time=(step + 0.5) * dt, error=err,
        )
    norm = np.linalg.norm(psi)
    if abs(norm - 1.0) > 1e-9:
        raise PropagationError(f"norm drifted to {norm:.12f}")
    if settings.record_stride > 0:
        return Trajectory(times=times, states=out)
    return Trajectory(times=times, states=np.stack([start, psi]))


def final_state(terms, pulse, settings=EvolveSettings(), initial=None) -> np.ndarray:
    return evolve(terms, pulse, EvolveSettings(
        n_steps=settings.n_steps, krylov_dim_max=settings.krylov_dim_max,
        krylov_tol=settings.krylov_tol, record_stride=0,
        max_subdivisions=settings.max_subdivisions), initial).final
