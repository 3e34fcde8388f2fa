import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rydberg_ghz.lattice import LatticeSpec, lattice_interactions
from rydberg_ghz.pulses import (
    HZ_TO_RAD_PER_US, ConstantPulse, PulseDomainError, PulseParams, QuenchProfile, QuenchPulse,
    ScaledPulse, SplinePulse, delta_waveform, omega_waveform, quench_waveform,
)


def dense_spline_coefficients(values, duration):
    """Solve the 12x12 system for four quadratics a_k + b_k t + c_k t^2 in absolute time."""
    h = duration / 4
    knots = [0, h, 2 * h, 3 * h, duration]
    ys = [0.0, *values, 0.0]
    rows, rhs = [], []

    def row(piece, t, deriv=0):
        r = np.zeros(12)
        if deriv == 0:
            r[3 * piece: 3 * piece + 3] = [1, t, t * t]
        else:
            r[3 * piece: 3 * piece + 3] = [0, 1, 2 * t]
        return r

    for k in range(4):
        rows.append(row(k, knots[k]))
        rhs.append(ys[k])
        rows.append(row(k, knots[k + 1]))
        rhs.append(ys[k + 1])
    for k in range(3):
        rows.append(row(k, knots[k + 1], 1) - row(k + 1, knots[k + 1], 1))
        rhs.append(0.0)
    rows.append(row(0, 0.0, 1))
    rhs.append(0.0)
    return np.linalg.solve(np.array(rows), np.array(rhs)).reshape(4, 3)


def dense_eval(coeffs, duration, t):
    k = min(int(t / (duration / 4)), 3)
    a, b, c = coeffs[k]
    return a + b * t + c * t * t


def test_omega_at_middle_knot():
    p = PulseParams((1.0, 2.5, 0.7), (0, 0, 0), 0.1)
    assert float(omega_waveform(p, 0.05)) == pytest.approx(2.5, rel=1e-13)


def test_omega_vanishes_at_ends():
    p = PulseParams((3.0, 5.0, 4.0), (1, 2, 3), 0.3)
    assert float(omega_waveform(p, 0.0)) == 0.0
    assert float(omega_waveform(p, 0.3)) == 0.0


def test_omega_matches_dense_solve_flat_knots():
    b, T = 1.7, 0.8
    p = PulseParams((b, b, b), (0, 0, 0), T)
    coeffs = dense_spline_coefficients([b, b, b], T)
    assert float(omega_waveform(p, T / 8)) == pytest.approx(dense_eval(coeffs, T, T / 8), abs=1e-12)


def test_omega_matches_dense_solve_random(rng):
    for _ in range(20):
        vals = rng.uniform(0, 10, 3)
        T = rng.uniform(0.05, 2.0)
        p = PulseParams(tuple(vals), (0, 0, 0), T)
        coeffs = dense_spline_coefficients(vals, T)
        ts = rng.uniform(0, T, 50)
        got = omega_waveform(p, ts)
        want = [dense_eval(coeffs, T, t) for t in ts]
        np.testing.assert_allclose(got, want, atol=1e-12 * max(1, vals.max()))


def test_omega_is_c1_at_interior_knots(rng):
    vals = rng.uniform(0, 5, 3)
    T = 1.0
    coeffs = dense_spline_coefficients(vals, T)
    p = PulseParams(tuple(vals), (0, 0, 0), T)
    h = 1e-6
    for knot in (0.25, 0.5, 0.75):
        left = (float(omega_waveform(p, knot)) - float(omega_waveform(p, knot - h))) / h
        right = (float(omega_waveform(p, knot + h)) - float(omega_waveform(p, knot))) / h
        # one-sided quotients differ by O(h * curvature); compare exact slopes instead
        k = int(knot / 0.25)
        slope_left = coeffs[k - 1, 1] + 2 * coeffs[k - 1, 2] * knot
        slope_right = coeffs[k, 1] + 2 * coeffs[k, 2] * knot
        assert slope_left == pytest.approx(slope_right, rel=1e-10, abs=1e-10)
        assert left == pytest.approx(right, abs=1e-4 * (1 + abs(slope_left)))


def test_omega_starts_flat():
    p = PulseParams((2.0, 1.0, 3.0), (0, 0, 0), 1.0)
    h = 1e-7
    assert float(omega_waveform(p, h)) / h == pytest.approx(0.0, abs=1e-5)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=3, max_size=3),
       st.lists(st.floats(-100, 100), min_size=3, max_size=3),
       st.floats(0.1, 10), st.floats(0, 1))
def test_linearity_in_knots(om, de, scale, frac):
    T = 0.5
    base = PulseParams(tuple(om), tuple(de), T)
    scaled = PulseParams(tuple(scale * x for x in om), tuple(scale * x for x in de), T)
    t = frac * T
    assert float(omega_waveform(scaled, t)) == pytest.approx(scale * float(omega_waveform(base, t)),
                                                              rel=1e-9, abs=1e-9)
    assert float(delta_waveform(scaled, t)) == pytest.approx(scale * float(delta_waveform(base, t)),
                                                             rel=1e-9, abs=1e-9)


def test_waveforms_are_pure():
    p = SplinePulse(PulseParams((1, 2, 3), (4, 5, 6), 0.7))
    t = np.linspace(0, 0.7, 33)
    a = p(t)
    b = p(t)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_delta_constant_knots():
    p = PulseParams((0, 0, 0), (2.5, 2.5, 2.5), 1.0)
    np.testing.assert_allclose(delta_waveform(p, np.linspace(0, 1, 11)), 2.5, rtol=1e-14)


def test_delta_linear_ramp_extrapolates():
    p = PulseParams((0, 0, 0), (-1.0, 0.0, 1.0), 1.0)
    # Lagrange line through (1/4,-1), (1/2,0), (3/4,1): value -2 at t = 0
    assert float(delta_waveform(p, 0.0)) == pytest.approx(-2.0, abs=1e-13)
    assert float(delta_waveform(p, 1.0)) == pytest.approx(2.0, abs=1e-13)


def test_delta_hits_knots(rng):
    vals = rng.normal(size=3)
    T = 0.4
    p = PulseParams((0, 0, 0), tuple(vals), T)
    np.testing.assert_allclose(delta_waveform(p, [T / 4, T / 2, 3 * T / 4]), vals, atol=1e-13)


def test_domain_errors():
    p = PulseParams((1, 1, 1), (1, 1, 1), 1.0)
    with pytest.raises(PulseDomainError):
        omega_waveform(p, -0.01)
    with pytest.raises(PulseDomainError):
        delta_waveform(p, 1.01)
    with pytest.raises(PulseDomainError):
        quench_waveform(QuenchProfile(1, 1, 1.0), 2.0)


def test_param_validation():
    with pytest.raises(ValueError):
        PulseParams((-1, 0, 0), (0, 0, 0), 1.0)
    with pytest.raises(ValueError):
        PulseParams((1, 0, 0), (0, 0, 0), 0.0)


def test_vector_roundtrip():
    x = np.array([1, 2, 3, -4, 5, -6.0])
    assert np.array_equal(PulseParams.from_vector(x, 1.0).as_vector(), x)


def test_quench_constant_hold():
    prof = QuenchProfile(3.0, 3.0, 1.0)
    t = np.linspace(0.001, 0.999, 50)
    np.testing.assert_allclose(quench_waveform(prof, t), 3.0)
    assert float(quench_waveform(prof, 0.0)) == 0.0
    assert float(quench_waveform(prof, 1.0)) == 0.0


def test_quench_edges():
    prof = QuenchProfile(2.0, 5.0, 1.0)
    eps = 1e-9
    assert float(quench_waveform(prof, eps)) == pytest.approx(2.0, abs=1e-6)
    assert float(quench_waveform(prof, 1 - eps)) == pytest.approx(5.0, abs=1e-6)
    assert float(quench_waveform(prof, 0.5)) == pytest.approx(3.5)


def test_quench_ramp_window():
    prof = QuenchProfile(2.0, 4.0, 1.0, ramp_start=0.25, ramp_end=0.75)
    assert float(quench_waveform(prof, 0.1)) == 2.0
    assert float(quench_waveform(prof, 0.5)) == pytest.approx(3.0)
    assert float(quench_waveform(prof, 0.9)) == 4.0


def test_g_definition():
    table = lattice_interactions(LatticeSpec((2, 2)))
    v0 = table.v0 * HZ_TO_RAD_PER_US
    assert QuenchProfile(v0, v0, 1.0).g(table) == pytest.approx(1.0, rel=1e-14)
    assert QuenchProfile(0.5 * v0, 1.5 * v0, 1.0).g(table) == pytest.approx(1.0, rel=1e-14)


def test_scaled_and_constant_pulses():
    base = SplinePulse(PulseParams((1, 2, 3), (4, 5, 6), 1.0))
    s = ScaledPulse(base, 1.03, 0.97)
    assert float(s.omega(0.5)) == pytest.approx(1.03 * 2)
    assert float(s.delta(0.5)) == pytest.approx(0.97 * 5)
    c = ConstantPulse(1.5, -2.0, 0.3)
    om, de = c(np.array([0.0, 0.1, 0.3]))
    assert np.all(om == 1.5) and np.all(de == -2.0)
    qp = QuenchPulse(QuenchProfile(1.0, 1.0, 0.2), delta=7.0)
    assert float(qp.delta(0.1)) == 7.0


def test_pulse_sample_grid():
    t, om, de = SplinePulse(PulseParams((1, 2, 3), (4, 5, 6), 2.0)).sample(9)
    assert t[0] == 0 and t[-1] == 2.0 and len(t) == 9
    assert om[0] == 0 and om[-1] == 0
