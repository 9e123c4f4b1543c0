import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qdfss.doublet import (
    DarkMeasurementError,
    ExcitonDoublet,
    alpha_difference,
    alpha_difference_hwp,
    delta_e_hwp,
    delta_e_qwp,
    forward_curve,
    mev_to_wavelength,
    observed_energy,
    observed_shift,
    observed_shift_grid,
    wavelength_to_mev,
)
from qdfss.polar import ChannelParams, WaveplateKind, WaveplateSetting

angles = st.floats(-7, 7, allow_nan=False)
pol = st.floats(-0.95, 0.95)
split = st.floats(-300, 300, allow_nan=False)
QWP, HWP = WaveplateKind.QWP, WaveplateKind.HWP


def test_line_energies():
    d = ExcitonDoublet(800.0, 40.0)
    assert d.e_h == pytest.approx(800.02, abs=1e-12)
    assert d.e_v == pytest.approx(799.98, abs=1e-12)
    assert (d.e_h - d.e_v) * 1e3 == pytest.approx(40.0)


def test_p_out_of_range():
    with pytest.raises(ValueError):
        ExcitonDoublet(800, 10, 1.5)


def test_wavelength_conversion():
    assert wavelength_to_mev(1239.842) == pytest.approx(1000.0)
    assert mev_to_wavelength(wavelength_to_mev(1550.0)) == pytest.approx(1550.0, rel=1e-14)


def test_alpha_difference_examples():
    assert alpha_difference(0, 0, 0) == pytest.approx(1)
    assert alpha_difference(0, 0, math.pi / 4) == pytest.approx(0, abs=1e-15)
    assert alpha_difference(math.pi / 2, math.pi / 2, math.radians(22.5)) == pytest.approx(-math.sqrt(2) / 2)


def test_observed_energy_examples():
    d = ExcitonDoublet(800.0, 100.0, 0.2)
    wp = WaveplateSetting(QWP, 0.0)
    assert observed_energy(d, ChannelParams(0, 0), wp) == pytest.approx(800_000 + 50, abs=1e-9)
    d = ExcitonDoublet(800.0, 235.0, 0.0)
    assert observed_shift(d, ChannelParams(0, 0), wp) == pytest.approx(117.5, abs=1e-12)


@given(split, angles, angles, angles)
def test_p_one_selects_upper_line(s, theta, phi, chi):
    d = ExcitonDoublet(800.0, s, 1.0)
    ch, wp = ChannelParams(theta, phi), WaveplateSetting(QWP, chi)
    try:
        shift = observed_shift(d, ch, wp)
    except DarkMeasurementError:
        return
    assert shift == pytest.approx(s / 2, abs=1e-9)


def test_dark_measurement():
    # p = -1 populates only B1 = V after theta = pi; measuring H sees nothing
    with pytest.raises(DarkMeasurementError):
        delta_e_qwp(20.0, -1.0, 0.0, 0.0, 0.0)
    with pytest.raises(DarkMeasurementError):
        observed_shift(ExcitonDoublet(800, 20, -1.0), ChannelParams(0, 0), WaveplateSetting(QWP, 0))


def test_delta_e_qwp_examples():
    chi = np.linspace(0, math.pi, 37)
    np.testing.assert_allclose(delta_e_qwp(40.0, 0.0, 0.0, 0.3, chi), 10 * (1 + np.cos(4 * chi)), atol=1e-12)
    np.testing.assert_allclose(delta_e_qwp(40.0, 1.0, 0.7, 0.3, chi), 20.0, atol=1e-12)
    assert delta_e_qwp(29.0, 0.0, 0.0, 0.0, math.pi / 4) == pytest.approx(0, abs=1e-12)


def test_delta_e_hwp_examples():
    assert delta_e_hwp(30.0, 0, 0, 0, 0.0) == pytest.approx(15.0)
    assert delta_e_hwp(30.0, 0, 0, 0, math.pi / 8) == pytest.approx(0, abs=1e-12)
    chi = np.linspace(0, math.pi, 721)
    assert np.ptp(delta_e_hwp(49.0, 0, 0.0, 0, chi)) == pytest.approx(49.0, abs=1e-12)
    np.testing.assert_allclose(delta_e_hwp(49.0, 0, 1.3, 0, chi), 24.5 * np.cos(4 * chi - 1.3), atol=1e-12)


@given(split, pol, angles, angles, angles)
def test_closed_forms_match_reference_path(s, p, theta, phi, chi):
    ch = ChannelParams(theta, phi)
    d = ExcitonDoublet(800.0, s, p)
    assert abs(delta_e_qwp(s, p, theta, phi, chi) - observed_shift(d, ch, WaveplateSetting(QWP, chi))) < 1e-10
    assert abs(delta_e_hwp(s, p, theta, phi, chi) - observed_shift(d, ch, WaveplateSetting(HWP, chi))) < 1e-10


@given(angles, angles, angles)
def test_hwp_alpha_difference(theta, phi, chi):
    from qdfss.polar import measurement_state, projection_weights

    a1, a2 = projection_weights(measurement_state(WaveplateSetting(HWP, chi)), ChannelParams(theta, phi))
    assert abs(alpha_difference_hwp(theta, phi, chi) - (a1 - a2)) < 1e-12


@given(split, pol, angles, angles, st.sampled_from([QWP, HWP]))
def test_period_pi_in_chi(s, p, theta, phi, kind):
    chi = np.linspace(0, math.pi, 19)
    a = observed_shift_grid(kind, s, p, theta, phi, chi)
    b = observed_shift_grid(kind, s, p, theta, phi, chi + math.pi)
    np.testing.assert_allclose(a, b, atol=1e-9)


@given(split, angles, angles, st.sampled_from([QWP, HWP]))
def test_p0_excursion_bounded_by_s(s, theta, phi, kind):
    chi = np.linspace(0, math.pi, 181)
    curve = observed_shift_grid(kind, s, 0.0, theta, phi, chi)
    assert np.ptp(curve) <= abs(s) + 1e-9


@given(split, st.floats(-5, 5), pol, angles, angles)
def test_linear_in_s(s, k, p, theta, phi):
    chi = np.linspace(0, math.pi, 19)
    np.testing.assert_allclose(delta_e_qwp(k * s, p, theta, phi, chi),
                               k * delta_e_qwp(s, p, theta, phi, chi), atol=1e-9)


@given(split, pol, angles, angles)
def test_sign_degeneracy(s, p, theta, phi):
    chi = np.linspace(0, math.pi, 72, endpoint=False)
    for f in (delta_e_qwp, delta_e_hwp):
        np.testing.assert_allclose(f(s, p, theta, phi, chi), f(-s, -p, theta + math.pi, phi, chi), atol=1e-12)


def test_forward_curve():
    pts = forward_curve(ExcitonDoublet(800, 17, 0), ChannelParams(1.0, 0.7), QWP, np.radians(np.arange(0, 180, 5)), 0.5)
    assert len(pts) == 36 and all(pt.sigma == 0.5 for pt in pts)
    assert all(abs(pt.delta_e) <= 17 / 2 + 1e-12 for pt in pts)
