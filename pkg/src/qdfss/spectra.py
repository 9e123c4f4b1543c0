"""Synthetic spectrometer for polarization-resolved exciton spectra.

Each spectrum is the transmitted doublet at one waveplate angle: two lines
at E_H and E_V weighted by their populations and analyzer projections, with
the intrinsic line shape convolved with a Gaussian instrument response and
sampled at pixel centres.
"""
from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import special

from .doublet import ExcitonDoublet
from .polar import ChannelParams, WaveplateKind, WaveplateSetting, measurement_state, projection_weights

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
# Olivero-Longbothum Voigt width for equal Lorentzian and Gaussian FWHMs
_VOIGT_EQUAL_FACTOR = 0.5346 + math.sqrt(0.2166 + 1.0)
RNG_NAME = "numpy.PCG64"


class LineShape(str, enum.Enum):
    LORENTZIAN = "Lorentzian"
    GAUSSIAN = "Gaussian"
    VOIGT = "Voigt"


class NoiseKind(str, enum.Enum):
    NONE = "None"
    POISSON = "Poisson"
    GAUSSIAN = "GaussianAdditive"


@dataclass(frozen=True)
class SpectrometerConfig:
    center_energy: float = 800.0  # meV
    n_pixels: int = 1024
    dispersion: float = 10.0  # ueV / pixel
    instrument_fwhm: float = 30.0  # ueV
    shape: LineShape = LineShape.LORENTZIAN
    line_fwhm: float = 20.0  # ueV

    def __post_init__(self):
        object.__setattr__(self, "shape", LineShape(self.shape))
        if self.n_pixels < 16:
            raise ValueError("n_pixels must be >= 16")
        if self.dispersion <= 0:
            raise ValueError("dispersion must be > 0")
        if self.instrument_fwhm < 0:
            raise ValueError("instrument_fwhm must be >= 0")
        if self.line_fwhm <= 0:
            raise ValueError("line_fwhm must be > 0")

    def pixel_energies(self) -> np.ndarray:
        """Pixel-centre energies in meV."""
        offsets = (np.arange(self.n_pixels) - 0.5 * (self.n_pixels - 1)) * self.dispersion
        return self.center_energy + 1e-3 * offsets

    @property
    def span(self) -> float:
        """Grid span in ueV."""
        return self.n_pixels * self.dispersion

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shape"] = self.shape.value
        return d


@dataclass(frozen=True)
class NoiseModel:
    kind: NoiseKind = NoiseKind.POISSON
    peak_counts: float = 1e4
    seed: int = 0
    sigma_counts: float = 10.0  # GaussianAdditive only
    background: float = 0.0  # constant counts per pixel

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        if self.peak_counts <= 0:
            raise ValueError("peak_counts must be > 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        d["rng"] = RNG_NAME
        return d


@dataclass
class Spectrum:
    pixel_energies: np.ndarray  # meV
    counts: np.ndarray
    chi: float
    kind: WaveplateKind
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.pixel_energies = np.asarray(self.pixel_energies, dtype=float)
        self.counts = np.asarray(self.counts, dtype=float)
        self.kind = WaveplateKind(self.kind)
        if self.pixel_energies.shape != self.counts.shape:
            raise ValueError("pixel_energies and counts must have the same length")

    @property
    def instrument_fwhm(self) -> float:
        return float(self.meta.get("instrument_fwhm", 0.0))


def shape_widths(shape, line_fwhm: float, instrument_fwhm: float) -> tuple[float, float]:
    """Return (gamma, sigma) in ueV of the Voigt describing line (x) instrument."""
    shape = LineShape(shape)
    sig_i = instrument_fwhm * FWHM_TO_SIGMA
    if shape is LineShape.LORENTZIAN:
        return 0.5 * line_fwhm, sig_i
    if shape is LineShape.GAUSSIAN:
        return 0.0, math.hypot(line_fwhm * FWHM_TO_SIGMA, sig_i)
    f = line_fwhm / _VOIGT_EQUAL_FACTOR
    return 0.5 * f, math.hypot(f * FWHM_TO_SIGMA, sig_i)


def profile_density(offset_uev, shape, line_fwhm: float, instrument_fwhm: float = 0.0):
    """Unit-area line profile per ueV at ``offset_uev`` from the line centre."""
    gamma, sigma = shape_widths(shape, line_fwhm, instrument_fwhm)
    x = np.asarray(offset_uev, dtype=float)
    if sigma == 0.0:
        return gamma / math.pi / (x * x + gamma * gamma)
    return special.voigt_profile(x, sigma, gamma)


def line_profile(center: float, cfg: SpectrometerConfig) -> np.ndarray:
    """Profile of a line at ``center`` (meV) sampled at the pixel centres."""
    offset = 1e3 * (center - cfg.center_energy)
    if abs(offset) > 0.25 * cfg.span:
        raise ValueError(
            f"line at {center} meV is off-grid (|offset| {abs(offset):.1f} ueV > "
            f"{0.25 * cfg.span:.1f} ueV)"
        )
    x = 1e3 * (cfg.pixel_energies() - center)
    return profile_density(x, cfg.shape, cfg.line_fwhm, cfg.instrument_fwhm)


def line_weights(d: ExcitonDoublet, ch: ChannelParams, wp: WaveplateSetting) -> tuple[float, float]:
    """Transmitted intensities of the E_H and E_V lines."""
    a1, a2 = projection_weights(measurement_state(wp), ch)
    return 0.5 * (1 + d.p) * a1, 0.5 * (1 - d.p) * a2


def spectrum_rng(seed: int, index: int) -> np.random.Generator:
    """Per-spectrum generator; depends only on (seed, index)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def expected_counts(d: ExcitonDoublet, ch: ChannelParams, wp: WaveplateSetting,
                    cfg: SpectrometerConfig, noise: NoiseModel) -> np.ndarray:
    # unpolarized light through the analyzer transmits half; the factor 2 puts
    # a fully selected line at peak_counts
    i1, i2 = line_weights(d, ch, wp)
    peak = float(profile_density(0.0, cfg.shape, cfg.line_fwhm, cfg.instrument_fwhm))
    scale = 2.0 * noise.peak_counts / peak
    model = scale * (i1 * line_profile(d.e_h, cfg) + i2 * line_profile(d.e_v, cfg))
    return model + noise.background


def apply_noise(model: np.ndarray, noise: NoiseModel, rng: np.random.Generator) -> np.ndarray:
    if noise.kind is NoiseKind.NONE:
        return model.copy()
    if noise.kind is NoiseKind.POISSON:
        return rng.poisson(model).astype(float)
    return np.clip(model + rng.normal(0.0, noise.sigma_counts, model.shape), 0.0, None)


def synthesize_scan(
    d: ExcitonDoublet,
    ch: ChannelParams,
    scan: Sequence[WaveplateSetting],
    cfg: Optional[SpectrometerConfig] = None,
    noise: Optional[NoiseModel] = None,
) -> list[Spectrum]:
    """Render one spectrum per waveplate setting; deterministic for a fixed seed."""
    cfg = cfg or SpectrometerConfig()
    noise = noise or NoiseModel()
    energies = cfg.pixel_energies()
    spectra = []
    for index, wp in enumerate(scan):
        model = expected_counts(d, ch, wp, cfg, noise)
        counts = apply_noise(model, noise, spectrum_rng(noise.seed, index))
        meta = {
            "instrument_fwhm": cfg.instrument_fwhm,
            "line_fwhm": cfg.line_fwhm,
            "shape": cfg.shape.value,
            "seed": noise.seed,
            "index": index,
            "rng": RNG_NAME,
        }
        spectra.append(Spectrum(energies.copy(), counts, wp.chi, wp.kind, meta))
    return spectra


def spectrum_centroid(sp: Spectrum, background: float = 0.0) -> float:
    """Intensity-weighted mean energy (meV) of a spectrum."""
    w = sp.counts - background
    return float(np.sum(w * sp.pixel_energies) / np.sum(w))


def scan_angles(kind, start_deg: float = 0.0, stop_deg: float = 175.0, step_deg: float = 5.0):
    chis = np.arange(start_deg, stop_deg + 0.5 * step_deg, step_deg)
    return [WaveplateSetting.from_degrees(kind, c) for c in chis]
