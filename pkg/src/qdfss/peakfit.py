"""Line-shape fits for centroid extraction.

Fits use a constant background, Poisson pixel weights 1/max(counts, 1) and the
instrument response recorded with each spectrum. The fitted width is the
intrinsic line FWHM; the instrument FWHM stays fixed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.signal import find_peaks

from .lm import covariance_from_jacobian, levenberg_marquardt
from .spectra import LineShape, Spectrum, profile_density

SIGNIFICANCE = 5.0


class NoPeakError(ValueError):
    pass


class UnresolvedError(ValueError):
    """The doublet is not resolved; use :func:`fit_single_peak` instead."""


@dataclass(frozen=True)
class PeakFitResult:
    centroid: float  # meV
    centroid_sigma: float  # ueV
    fwhm: float  # ueV, intrinsic
    amplitude: float  # peak counts
    background: float
    residual_norm: float
    converged: bool


def _noise_level(counts: np.ndarray, background: float) -> float:
    mad = 1.4826 * np.median(np.abs(counts - np.median(counts)))
    return max(mad, math.sqrt(max(background, 1.0)))


def _background_guess(counts: np.ndarray) -> float:
    return float(np.percentile(counts, 10))


def _weights(counts: np.ndarray) -> np.ndarray:
    return 1.0 / np.maximum(counts, 1.0)


class _LineModel:
    """Sum of ``n`` peak-normalized lines sharing one intrinsic width."""

    def __init__(self, x_uev: np.ndarray, shape, instrument_fwhm: float, n: int):
        self.x = x_uev
        self.shape = LineShape(shape)
        self.inst = instrument_fwhm
        self.n = n

    def unit(self, center, width):
        width = max(width, 1e-6)
        peak = profile_density(0.0, self.shape, width, self.inst)
        return profile_density(self.x - center, self.shape, width, self.inst) / peak

    def __call__(self, params):
        # params: centers[n], width, amplitudes[n], background
        n = self.n
        centers = params[:n]
        width = params[n]
        amps = params[n + 1:2 * n + 1]
        out = np.full(self.x.shape, params[-1], dtype=float)
        for c, a in zip(centers, amps):
            out += a * self.unit(c, width)
        return out


def _fit(sp: Spectrum, shape, centers0, width0, amps0, bg0, fit_centers=True):
    ref = float(sp.pixel_energies[np.argmax(sp.counts)])
    x = 1e3 * (sp.pixel_energies - ref)
    n = len(centers0)
    model = _LineModel(x, shape, sp.instrument_fwhm, n)
    sw = np.sqrt(_weights(sp.counts))
    y = sp.counts
    p0 = np.concatenate([1e3 * (np.asarray(centers0) - ref), [width0], amps0, [bg0]])
    span = x[-1] - x[0]
    lower = np.concatenate([np.full(n, x.min()), [1e-3], np.zeros(n), [-np.inf]])
    upper = np.concatenate([np.full(n, x.max()), [abs(span)], np.full(n, np.inf), [np.inf]])

    def resid(p):
        return (model(p) - y) * sw

    res = levenberg_marquardt(resid, p0, lower=lower, upper=upper)
    dof = max(y.size - p0.size, 1)
    chi2 = 2 * res.cost
    cov, _ = covariance_from_jacobian(res.jac)
    red = chi2 / dof
    if red > 1:
        cov = cov * red
    return res, cov, ref, math.sqrt(red)


def fit_single_peak(sp: Spectrum, shape=LineShape.LORENTZIAN) -> PeakFitResult:
    """Fit one line plus constant background; centroid error from the covariance."""
    counts = sp.counts
    if counts.size < 16:
        raise NoPeakError("spectrum needs at least 16 pixels")
    bg0 = _background_guess(counts)
    sigma = _noise_level(counts, bg0)
    imax = int(np.argmax(counts))
    height = counts[imax] - bg0
    if height <= SIGNIFICANCE * sigma:
        raise NoPeakError(f"no peak above background + {SIGNIFICANCE:g} sigma")
    disp = abs(1e3 * (sp.pixel_energies[1] - sp.pixel_energies[0]))
    above = np.count_nonzero(counts - bg0 > 0.5 * height)
    fwhm_obs = max(above * disp, disp)
    width0 = math.sqrt(max(fwhm_obs ** 2 - sp.instrument_fwhm ** 2, (0.3 * fwhm_obs) ** 2))
    res, cov, ref, rnorm = _fit(sp, shape, [sp.pixel_energies[imax]], width0, [height], bg0)
    c, w, a, b = res.x
    return PeakFitResult(
        centroid=ref + 1e-3 * c,
        centroid_sigma=float(math.sqrt(cov[0, 0])),
        fwhm=float(w),
        amplitude=float(a),
        background=float(b),
        residual_norm=rnorm,
        converged=res.converged,
    )


def _top_two(sp: Spectrum, background: float, sigma: float):
    """Indices of the two most prominent maxima, or None."""
    # Poisson scatter near the top dominates the background noise
    threshold = SIGNIFICANCE * (sigma + math.sqrt(max(sp.counts.max() - background, 0.0)))
    idx, props = find_peaks(sp.counts, prominence=threshold)
    if idx.size < 2:
        return None
    return idx[np.argsort(props["prominences"])[::-1][:2]]


def fit_double_peak(
    sp: Spectrum,
    shape=LineShape.LORENTZIAN,
    centers: Optional[Sequence[float]] = None,
) -> tuple[PeakFitResult, PeakFitResult]:
    """Simultaneous two-line fit; results ordered by increasing energy."""
    counts = sp.counts
    bg0 = _background_guess(counts)
    sigma = _noise_level(counts, bg0)
    disp = abs(1e3 * (sp.pixel_energies[1] - sp.pixel_energies[0]))
    if centers is None:
        top = _top_two(sp, bg0, sigma)
        if top is None:
            raise UnresolvedError("fewer than two resolved maxima; use fit_single_peak")
        sep = abs(1e3 * (sp.pixel_energies[top[0]] - sp.pixel_energies[top[1]]))
        if sep <= sp.instrument_fwhm:
            raise UnresolvedError("maxima closer than the instrument FWHM; use fit_single_peak")
        centers = sorted(float(sp.pixel_energies[i]) for i in top)
    centers = sorted(float(c) for c in centers)
    amps0 = [
        max(float(np.interp(c, sp.pixel_energies, counts)) - bg0, sigma) for c in centers
    ]
    sep = abs(1e3 * (centers[1] - centers[0]))
    width0 = max(min(sep, 2 * sp.instrument_fwhm + disp) / 2, 2 * disp)
    res, cov, ref, rnorm = _fit(sp, shape, centers, width0, amps0, bg0)
    c1, c2, w, a1, a2, b = res.x
    out = []
    for k, (c, a) in enumerate(((c1, a1), (c2, a2))):
        out.append(PeakFitResult(
            centroid=ref + 1e-3 * c,
            centroid_sigma=float(math.sqrt(cov[k, k])),
            fwhm=float(w),
            amplitude=float(a),
            background=float(b),
            residual_norm=rnorm,
            converged=res.converged,
        ))
    out.sort(key=lambda r: r.centroid)
    return out[0], out[1]


@dataclass(frozen=True)
class ScanDoublet:
    """Doublet decomposition shared by all spectra of one scan."""

    e_low: float  # meV
    e_high: float  # meV
    fwhm: float  # ueV
    amplitudes: np.ndarray  # (n_spectra, 2): low line, high line
    backgrounds: np.ndarray
    centroids: np.ndarray  # meV
    centroid_sigmas: np.ndarray  # ueV
    converged: bool


def fit_scan_doublet(
    spectra: Sequence[Spectrum],
    shape=LineShape.LORENTZIAN,
    centers: Optional[Sequence[float]] = None,
    width: Optional[float] = None,
    window: Optional[float] = None,
) -> ScanDoublet:
    """Fit two lines with positions and width shared across a scan.

    Only the line amplitudes and background vary from spectrum to spectrum, so
    for given positions they follow from a weighted linear solve; the outer
    problem has three parameters. Returns the intensity-weighted centroid of
    every spectrum.
    """
    energies = spectra[0].pixel_energies
    for sp in spectra[1:]:
        if not np.array_equal(sp.pixel_energies, energies):
            raise ValueError("all spectra of a scan must share one pixel grid")
    inst = spectra[0].instrument_fwhm
    Y = np.stack([sp.counts for sp in spectra])
    W = np.sqrt(_weights(Y))
    total = spectra[0]
    summed = Spectrum(energies, Y.sum(axis=0), total.chi, total.kind, dict(total.meta))
    if centers is None or width is None:
        try:
            lo, hi = fit_double_peak(summed, shape)
            c0 = [lo.centroid, hi.centroid]
            w0 = lo.fwhm
        except UnresolvedError:
            singles = [fit_single_peak(sp, shape) for sp in spectra]
            cs = np.array([r.centroid for r in singles])
            spread = max(1e3 * (cs.max() - cs.min()), 2.0)
            mid = 0.5 * (cs.max() + cs.min())
            c0 = [mid - 0.6e-3 * spread, mid + 0.6e-3 * spread]
            w0 = float(np.median([r.fwhm for r in singles]))
        centers = c0 if centers is None else centers
        width = w0 if width is None else width
    ref = float(np.mean(centers))
    x = 1e3 * (energies - ref)
    model = _LineModel(x, shape, inst, 2)
    ones = np.ones_like(x)

    def solve(params):
        u1 = model.unit(params[0], params[2])
        u2 = model.unit(params[1], params[2])
        basis = np.stack([u1, u2, ones], axis=1)
        coef = np.empty((Y.shape[0], 3))
        resid = np.empty_like(Y)
        for k in range(Y.shape[0]):
            A = basis * W[k][:, None]
            coef[k] = np.linalg.lstsq(A, Y[k] * W[k], rcond=None)[0]
            resid[k] = A @ coef[k] - Y[k] * W[k]
        return coef, resid, basis

    def fun(params):
        return solve(params)[1].ravel()

    p0 = np.array([1e3 * (centers[0] - ref), 1e3 * (centers[1] - ref), width], dtype=float)
    if window is None:
        lower = [x.min(), x.min(), 1e-3]
        upper = [x.max(), x.max(), abs(x[-1] - x[0])]
    else:
        # keep both lines near the observed centroid range
        lower = [p0[0] - window, p0[0] - window, 1e-3]
        upper = [p0[1] + window, p0[1] + window, abs(x[-1] - x[0])]
    res = levenberg_marquardt(fun, p0, lower=lower, upper=upper)
    e1, e2, w = res.x
    coef, resid, basis = solve(res.x)
    order = [0, 1] if e1 <= e2 else [1, 0]
    energies_fit = np.array([e1, e2])[order]
    cents = np.empty(Y.shape[0])
    sig = np.empty(Y.shape[0])
    for k in range(Y.shape[0]):
        a = coef[k, :2]
        tot = a.sum()
        c = float(a @ np.array([e1, e2])) / tot
        A = basis * W[k][:, None]
        cov = np.linalg.pinv(A.T @ A)
        red = float(resid[k] @ resid[k]) / max(x.size - 3, 1)
        if red > 1:
            cov = cov * red
        grad = np.array([(e1 - c) / tot, (e2 - c) / tot, 0.0])
        cents[k] = ref + 1e-3 * c
        sig[k] = math.sqrt(max(float(grad @ cov @ grad), 0.0))
    return ScanDoublet(
        e_low=ref + 1e-3 * energies_fit[0],
        e_high=ref + 1e-3 * energies_fit[1],
        fwhm=float(w),
        amplitudes=coef[:, order].copy(),
        backgrounds=coef[:, 2].copy(),
        centroids=cents,
        centroid_sigmas=sig,
        converged=res.converged,
    )


@dataclass(frozen=True)
class CentroidTable:
    chi: np.ndarray
    kind: str
    centroids: np.ndarray  # meV
    sigmas: np.ndarray  # ueV
    fwhm: np.ndarray  # ueV
    converged: np.ndarray
    method: str  # "single" or "doublet"


def _resolved(sp: Spectrum) -> bool:
    bg = _background_guess(sp.counts)
    top = _top_two(sp, bg, _noise_level(sp.counts, bg))
    if top is None:
        return False
    return abs(1e3 * (sp.pixel_energies[top[0]] - sp.pixel_energies[top[1]])) > sp.instrument_fwhm


def scan_centroids(spectra: Sequence[Spectrum], shape=LineShape.LORENTZIAN,
                   method: str = "auto") -> CentroidTable:
    """Centroid of every spectrum in a waveplate scan.

    ``single`` fits one line per spectrum (sub-resolution doublets).
    ``doublet`` uses :func:`fit_scan_doublet` and reports intensity-weighted
    centroids. ``auto`` starts from single-line fits and switches to the
    doublet decomposition once the centroid excursion exceeds half the
    instrument FWHM, where a one-line fit starts to bias the blend.
    """
    if method not in ("auto", "single", "doublet"):
        raise ValueError(f"unknown centroid method {method!r}")
    chi = np.array([sp.chi for sp in spectra])
    kind = spectra[0].kind.value
    singles = [fit_single_peak(sp, shape) for sp in spectra] if method != "doublet" else None
    use_doublet = method == "doublet"
    if method == "auto":
        cs = np.array([r.centroid for r in singles])
        excursion = 1e3 * (cs.max() - cs.min())
        use_doublet = excursion > 0.5 * spectra[0].instrument_fwhm or any(map(_resolved, spectra))
    if not use_doublet:
        return CentroidTable(
            chi=chi, kind=kind,
            centroids=np.array([r.centroid for r in singles]),
            sigmas=np.array([r.centroid_sigma for r in singles]),
            fwhm=np.array([r.fwhm for r in singles]),
            converged=np.array([r.converged for r in singles]),
            method="single",
        )
    window = None
    if singles is not None:
        window = float(np.median([r.fwhm for r in singles])) + spectra[0].instrument_fwhm
    dec = fit_scan_doublet(spectra, shape, window=window)
    return CentroidTable(
        chi=chi, kind=kind,
        centroids=dec.centroids,
        sigmas=dec.centroid_sigmas,
        fwhm=np.full(chi.size, dec.fwhm),
        converged=np.full(chi.size, dec.converged),
        method="doublet",
    )


def centroid_curve(table: CentroidTable, reference: Optional[float] = None):
    """Convert a centroid table to fit input; returns (curve, reference_meV)."""
    from .doublet import FssCurvePoint

    ref = float(np.mean(table.centroids)) if reference is None else reference
    curve = [
        FssCurvePoint(float(c), 1e3 * (e - ref), float(max(s, 1e-6)))
        for c, e, s in zip(table.chi, table.centroids, table.sigmas)
    ]
    return curve, ref
