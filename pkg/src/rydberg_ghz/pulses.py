"""Control waveforms: spline-parametrized pulses and the three-stage quench.

All rates are angular frequencies in rad/us with hbar = 1.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import InteractionTable

#: Hz -> rad/us
HZ_TO_RAD_PER_US = 2.0 * np.pi * 1e-6

_EDGE_TOL = 1e-12


class PulseDomainError(ValueError):
    """Raised when a waveform is sampled outside ``[0, T]``."""


def _check_times(t, duration):
    t = np.asarray(t, dtype=float)
    slack = _EDGE_TOL * max(duration, 1.0)
    if np.any(t < -slack) or np.any(t > duration + slack):
        raise PulseDomainError(f"time outside [0, {duration}]")
    return np.clip(t, 0.0, duration)


@dataclass(frozen=True)
class PulseParams:
    """Knot values of the Rabi frequency and detuning at T/4, T/2, 3T/4."""

    omega_knots: tuple[float, float, float]
    delta_knots: tuple[float, float, float]
    duration: float

    def __post_init__(self):
        object.__setattr__(self, "omega_knots", tuple(float(x) for x in self.omega_knots))
        object.__setattr__(self, "delta_knots", tuple(float(x) for x in self.delta_knots))
        if len(self.omega_knots) != 3 or len(self.delta_knots) != 3:
            raise ValueError("exactly three knots per waveform are required")
        if not self.duration > 0:
            raise ValueError(f"duration must be positive, got {self.duration}")
        if min(self.omega_knots) < 0:
            raise ValueError("Rabi knots must be non-negative")

    @classmethod
    def from_vector(cls, x, duration: float) -> "PulseParams":
        x = np.asarray(x, dtype=float)
        return cls(tuple(x[:3]), tuple(x[3:6]), duration)

    def as_vector(self) -> np.ndarray:
        return np.array(self.omega_knots + self.delta_knots)


def omega_spline_coefficients(knots, duration):
    """Piecewise-quadratic coefficients ``(y_k, d_k, c_k)`` per quarter.

    Piece ``k`` is ``y_k + d_k s + c_k s**2`` with ``s = t - k T/4``. The
    spline passes through ``0, w1, w2, w3, 0``, is C1, and starts with zero
    slope.
    """
    h = duration / 4.0
    ys = np.array([0.0, *knots, 0.0])
    coeffs = np.empty((4, 3))
    slope = 0.0
    for k in range(4):
        c = (ys[k + 1] - ys[k] - slope * h) / h**2
        coeffs[k] = ys[k], slope, c
        slope = slope + 2.0 * c * h
    return coeffs


def omega_waveform(params: PulseParams, t):
    t = _check_times(t, params.duration)
    coeffs = omega_spline_coefficients(params.omega_knots, params.duration)
    h = params.duration / 4.0
    k = np.minimum((t / h).astype(int), 3)
    s = t - k * h
    y, d, c = coeffs[k].T if t.ndim else coeffs[k]
    out = y + d * s + c * s * s
    # exact zeros at the endpoints, independent of rounding in the recursion
    return np.where((t == 0.0) | (t == params.duration), 0.0, out)


def delta_waveform(params: PulseParams, t):
    """Parabola through the three detuning knots, extrapolated to ``[0, T]``."""
    t = _check_times(t, params.duration)
    T = params.duration
    t1, t2, t3 = T / 4, T / 2, 3 * T / 4
    d1, d2, d3 = params.delta_knots
    return (
        d1 * (t - t2) * (t - t3) / ((t1 - t2) * (t1 - t3))
        + d2 * (t - t1) * (t - t3) / ((t2 - t1) * (t2 - t3))
        + d3 * (t - t1) * (t - t2) / ((t3 - t1) * (t3 - t2))
    )


class PulseShape:
    """Time-dependent controls ``(omega(t), delta(t))`` on ``[0, duration]``."""

    duration: float

    def omega(self, t):
        raise NotImplementedError

    def delta(self, t):
        raise NotImplementedError

    def __call__(self, t):
        return self.omega(t), self.delta(t)

    def sample(self, n_points: int = 201):
        """Uniform grid ``(t, omega, delta)`` including both endpoints."""
        t = np.linspace(0.0, self.duration, n_points)
        return t, np.asarray(self.omega(t), float), np.asarray(self.delta(t), float)


class SplinePulse(PulseShape):
    def __init__(self, params: PulseParams):
        self.params = params
        self.duration = params.duration

    def omega(self, t):
        return omega_waveform(self.params, t)

    def delta(self, t):
        return delta_waveform(self.params, t)


class ScaledPulse(PulseShape):
    """A pulse with its Rabi frequency and detuning multiplied by constants."""

    def __init__(self, base: PulseShape, omega_scale: float = 1.0, delta_scale: float = 1.0):
        self.base = base
        self.duration = base.duration
        self.omega_scale = float(omega_scale)
        self.delta_scale = float(delta_scale)

    def omega(self, t):
        return self.base.omega(t) * self.omega_scale

    def delta(self, t):
        return self.base.delta(t) * self.delta_scale


class ConstantPulse(PulseShape):
    def __init__(self, omega: float, delta: float, duration: float):
        if not duration > 0:
            raise ValueError("duration must be positive")
        self.omega_value = float(omega)
        self.delta_value = float(delta)
        self.duration = float(duration)

    def omega(self, t):
        t = _check_times(t, self.duration)
        return np.full_like(t, self.omega_value)

    def delta(self, t):
        t = _check_times(t, self.duration)
        return np.full_like(t, self.delta_value)


@dataclass(frozen=True)
class QuenchProfile:
    """Quench up to ``omega1``, linear change to ``omega2``, quench down.

    The linear change runs between the fractions ``ramp_start`` and
    ``ramp_end`` of the duration; outside it the drive is held.
    """

    omega1: float
    omega2: float
    duration: float
    ramp_start: float = 0.0
    ramp_end: float = 1.0

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if not 0.0 <= self.ramp_start <= self.ramp_end <= 1.0:
            raise ValueError("need 0 <= ramp_start <= ramp_end <= 1")

    def g(self, interactions: InteractionTable) -> float:
        """Mean Rabi frequency over the largest coupling (both in rad/us)."""
        v0 = interactions.v0 * HZ_TO_RAD_PER_US
        if v0 == 0:
            raise ValueError("g is undefined without interactions")
        return 0.5 * (self.omega1 + self.omega2) / v0


def quench_waveform(profile: QuenchProfile, t):
    t = _check_times(t, profile.duration)
    x = t / profile.duration
    a, b = profile.ramp_start, profile.ramp_end
    if b > a:
        frac = np.clip((x - a) / (b - a), 0.0, 1.0)
    else:
        frac = (x >= a).astype(float)
    out = profile.omega1 + (profile.omega2 - profile.omega1) * frac
    return np.where((t <= 0.0) | (t >= profile.duration), 0.0, out)


class QuenchPulse(PulseShape):
    def __init__(self, profile: QuenchProfile, delta: float):
        self.profile = profile
        self.duration = profile.duration
        self.delta_value = float(delta)

    def omega(self, t):
        return quench_waveform(self.profile, t)

    def delta(self, t):
        t = _check_times(t, self.duration)
        return np.full_like(t, self.delta_value)
