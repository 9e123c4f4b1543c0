"""Exciton doublet source model and the waveplate-scan forward model.

The reference path (:func:`observed_shift`) projects the propagated doublet on
the measurement state explicitly. :func:`alpha_difference`,
:func:`delta_e_qwp` and :func:`delta_e_hwp` are closed forms checked against it.

Units: splittings and shifts in ueV, absolute line energies in meV.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .polar import (
    ChannelParams,
    WaveplateKind,
    WaveplateSetting,
    measurement_state,
    projection_weights,
    projection_weights_grid,
)

HC_EV_NM = 1239.842
DARK_THRESHOLD = 1e-9


class DarkMeasurementError(ValueError):
    """The analyzer transmits no light, so the centroid is undefined."""


@dataclass(frozen=True)
class ExcitonDoublet:
    """Bright-exciton doublet.

    epsilon: mean transition energy in meV; s: fine-structure splitting
    E_H - E_V in ueV; p: polarization degree (population imbalance).
    """

    epsilon: float
    s: float
    p: float = 0.0

    def __post_init__(self):
        if not -1.0 <= self.p <= 1.0:
            raise ValueError(f"polarization degree p must lie in [-1, 1], got {self.p}")

    @property
    def e_h(self) -> float:
        return self.epsilon + 0.5e-3 * self.s

    @property
    def e_v(self) -> float:
        return self.epsilon - 0.5e-3 * self.s


@dataclass(frozen=True)
class FssCurvePoint:
    chi: float
    delta_e: float
    sigma: float


def wavelength_to_mev(wavelength_nm):
    return 1e3 * HC_EV_NM / np.asarray(wavelength_nm, dtype=float)


def mev_to_wavelength(energy_mev):
    return 1e3 * HC_EV_NM / np.asarray(energy_mev, dtype=float)


def _centroid_shift(s, p, diff):
    denom = 1 + p * diff
    if np.any(denom <= DARK_THRESHOLD):
        raise DarkMeasurementError("transmitted intensity vanishes for this setting")
    return 0.5 * s * (diff + p) / denom


def observed_shift(d: ExcitonDoublet, ch: ChannelParams, wp: WaveplateSetting) -> float:
    """Centroid deviation from epsilon (ueV) by explicit Jones projections."""
    a1, a2 = projection_weights(measurement_state(wp), ch)
    w1 = 0.5 * (1 + d.p) * a1
    w2 = 0.5 * (1 - d.p) * a2
    total = w1 + w2
    if total <= 0.5 * DARK_THRESHOLD:
        raise DarkMeasurementError("transmitted intensity vanishes for this setting")
    return 0.5 * d.s * (w1 - w2) / total


def observed_energy(d: ExcitonDoublet, ch: ChannelParams, wp: WaveplateSetting) -> float:
    """Intensity-weighted line energy seen at the spectrometer, in ueV."""
    return 1e3 * d.epsilon + observed_shift(d, ch, wp)


def observed_shift_grid(kind, s, p, theta, phi, chi) -> np.ndarray:
    """Vectorized reference path over broadcastable parameter arrays."""
    a1, a2 = projection_weights_grid(kind, theta, phi, chi)
    return _centroid_shift(np.asarray(s, float), np.asarray(p, float), a1 - a2)


def alpha_difference(theta, phi, chi):
    """Closed-form alpha_1 - alpha_2 for the quarter-wave-plate basis."""
    return 0.5 * (
        np.cos(theta) * (1 + np.cos(4 * chi))
        + np.sin(theta) * np.sin(4 * chi) * np.cos(phi)
        - 2 * np.sin(theta) * np.sin(2 * chi) * np.sin(phi)
    )


def alpha_difference_hwp(theta, phi, chi):
    return np.cos(theta) * np.cos(4 * chi) + np.sin(theta) * np.sin(4 * chi) * np.cos(phi)


def delta_e_qwp(s, p, theta, phi, chi):
    """Closed-form QWP centroid deviation in ueV; broadcasts over arrays."""
    ct = np.cos(theta)
    st = np.sin(theta)
    core = (
        ct * (1 + np.cos(4 * chi))
        + st * np.sin(4 * chi) * np.cos(phi)
        - 2 * st * np.sin(2 * chi) * np.sin(phi)
    )
    denom = 2 + p * core
    if np.any(denom <= 2 * DARK_THRESHOLD):
        raise DarkMeasurementError("transmitted intensity vanishes for this setting")
    return 0.5 * s * (2 * p + core) / denom


def delta_e_hwp(s, p, theta, phi, chi):
    """HWP centroid deviation in ueV; (s/2) cos(4 chi - theta) when p = phi = 0."""
    return _centroid_shift(np.asarray(s, float), np.asarray(p, float),
                           alpha_difference_hwp(theta, phi, chi))


def delta_e(kind, s, p, theta, phi, chi):
    if WaveplateKind(kind) is WaveplateKind.QWP:
        return delta_e_qwp(s, p, theta, phi, chi)
    return delta_e_hwp(s, p, theta, phi, chi)


def forward_curve(d: ExcitonDoublet, ch: ChannelParams, kind, chis, sigma: float = 1.0):
    """Noiseless list of :class:`FssCurvePoint` for the given angles."""
    values = delta_e(kind, d.s, d.p, ch.theta, ch.phi, np.asarray(chis, float))
    return [FssCurvePoint(float(c) % math.pi, float(v), sigma) for c, v in zip(chis, values)]
