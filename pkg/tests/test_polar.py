import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qdfss.doublet import alpha_difference
from qdfss.polar import (
    ChannelParams,
    JonesVector,
    WaveplateKind,
    WaveplateSetting,
    measurement_state,
    projection_weights,
    projection_weights_grid,
    propagate_density,
    rotated_eigenstate,
)

angles = st.floats(-10, 10, allow_nan=False)
R2 = 1 / math.sqrt(2)


def test_eigenstate_examples():
    assert rotated_eigenstate(1, ChannelParams(0, 0)).equals_up_to_phase(JonesVector(1, 0))
    b = rotated_eigenstate(1, ChannelParams(math.pi, 0.7))
    assert abs(b.h) < 1e-15 and abs(b.v - np.exp(0.7j)) < 1e-15
    b = rotated_eigenstate(1, ChannelParams(math.pi / 2, 0))
    assert abs(b.h - R2) < 1e-15 and abs(b.v - R2) < 1e-15


def test_eigenstate_bad_index():
    with pytest.raises(ValueError):
        rotated_eigenstate(3, ChannelParams(0, 0))


@given(angles, angles)
def test_eigenstates_orthonormal(theta, phi):
    ch = ChannelParams(theta, phi)
    b1, b2 = rotated_eigenstate(1, ch), rotated_eigenstate(2, ch)
    assert abs(b1.inner(b2)) < 1e-12
    assert abs(b1.norm() - 1) < 1e-12 and abs(b2.norm() - 1) < 1e-12


def test_density_examples():
    rho = propagate_density(0.0, ChannelParams(1.1, -0.4))
    np.testing.assert_allclose(rho.m, np.eye(2) / 2, atol=1e-15)
    rho = propagate_density(1.0, ChannelParams(0, 0))
    np.testing.assert_allclose(rho.m, [[1, 0], [0, 0]], atol=1e-15)
    rho = propagate_density(1.0, ChannelParams(math.pi / 2, 0))
    assert rho.expectation(JonesVector(1, 0)) == pytest.approx(0.5, abs=1e-15)


def test_density_domain():
    with pytest.raises(ValueError):
        propagate_density(1.2, ChannelParams(0, 0))


@given(st.floats(-1, 1), angles, angles)
def test_density_properties(p, theta, phi):
    m = propagate_density(p, ChannelParams(theta, phi)).m
    assert np.allclose(m, m.conj().T, atol=1e-12)
    assert abs(np.trace(m) - 1) < 1e-12
    ev = np.sort(np.linalg.eigvalsh(m))
    np.testing.assert_allclose(ev, sorted([(1 - p) / 2, (1 + p) / 2]), atol=1e-12)


def test_measurement_state_examples():
    m = measurement_state(WaveplateSetting(WaveplateKind.QWP, 0.0))
    assert abs(m.h - (1j + 1) * R2) < 1e-15
    assert m.equals_up_to_phase(JonesVector(1, 0))
    m = measurement_state(WaveplateSetting(WaveplateKind.QWP, math.pi / 4))
    assert m.equals_up_to_phase(JonesVector(1j * R2, R2))
    m = measurement_state(WaveplateSetting(WaveplateKind.HWP, math.pi / 8))
    assert m.equals_up_to_phase(JonesVector(R2, R2))


@given(st.sampled_from(list(WaveplateKind)), angles)
def test_measurement_state_unit_norm_and_periodic(kind, chi):
    a = measurement_state(WaveplateSetting(kind, chi))
    b = measurement_state(WaveplateSetting(kind, chi + math.pi))
    assert abs(a.norm() - 1) < 1e-12
    assert a.equals_up_to_phase(b, 1e-9)


def test_chi_stored_modulo_pi():
    assert WaveplateSetting(WaveplateKind.HWP, 4.0).chi == pytest.approx(4.0 - math.pi)
    assert WaveplateSetting.from_degrees("QWP", 190).chi == pytest.approx(math.radians(10))


def test_projection_examples():
    assert projection_weights(JonesVector(1, 0), ChannelParams(0, 0)) == pytest.approx((1, 0), abs=1e-15)
    circ = measurement_state(WaveplateSetting(WaveplateKind.QWP, math.pi / 4))
    for theta in np.linspace(0, math.pi, 7):
        assert projection_weights(circ, ChannelParams(theta, 0)) == pytest.approx((0.5, 0.5), abs=1e-12)
    m = measurement_state(WaveplateSetting(WaveplateKind.QWP, math.radians(22.5)))
    a1, a2 = projection_weights(m, ChannelParams(math.pi / 2, math.pi / 2))
    assert a1 - a2 == pytest.approx(-math.sqrt(2) / 2, abs=1e-12)


def test_projection_rejects_unnormalized():
    with pytest.raises(ValueError):
        projection_weights(JonesVector(1, 1), ChannelParams(0, 0))


@given(st.sampled_from(list(WaveplateKind)), angles, angles, angles)
def test_weights_sum_to_one(kind, theta, phi, chi):
    a1, a2 = projection_weights(measurement_state(WaveplateSetting(kind, chi)), ChannelParams(theta, phi))
    assert abs(a1 + a2 - 1) < 1e-12
    assert -1e-15 <= a1 <= 1 + 1e-15


@given(angles, angles, angles)
def test_closed_form_matches_projection(theta, phi, chi):
    a1, a2 = projection_weights(measurement_state(WaveplateSetting(WaveplateKind.QWP, chi)),
                                ChannelParams(theta, phi))
    assert abs(alpha_difference(theta, phi, chi) - (a1 - a2)) < 1e-12


def test_grid_matches_scalar_path():
    th = np.linspace(0, math.pi, 4)[:, None, None]
    ph = np.linspace(-math.pi, math.pi, 5)[None, :, None]
    chi = np.linspace(0, math.pi, 6)[None, None, :]
    for kind in WaveplateKind:
        a1, a2 = projection_weights_grid(kind, th, ph, chi)
        i, j, k = 2, 3, 4
        ref = projection_weights(measurement_state(WaveplateSetting(kind, chi.ravel()[k])),
                                 ChannelParams(th.ravel()[i], ph.ravel()[j]))
        assert (a1[i, j, k], a2[i, j, k]) == pytest.approx(ref, abs=1e-14)
