"""AFM topography: dot segmentation and ellipse fits from image moments.

Coordinates: x runs along columns, y along rows, both in nm; angles are
measured from +x towards +y and folded to [0, pi).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


class DegenerateRegionError(ValueError):
    pass


@dataclass(frozen=True)
class HeightMap:
    heights: np.ndarray  # nm, indexed [row, col]
    pixel_size: float  # nm

    def __post_init__(self):
        h = np.asarray(self.heights, dtype=float)
        if h.ndim != 2 or h.size == 0:
            raise ValueError("height map must be a nonempty 2D array")
        if not self.pixel_size > 0:
            raise ValueError("pixel_size must be > 0")
        if not np.all(np.isfinite(h)):
            raise ValueError("height map contains non-finite values")
        object.__setattr__(self, "heights", h)

    @property
    def shape(self):
        return self.heights.shape

    @property
    def area_cm2(self) -> float:
        rows, cols = self.shape
        return rows * cols * (self.pixel_size * 1e-7) ** 2


@dataclass(frozen=True)
class EllipseFit:
    center: tuple  # (x, y) nm
    r_x: float  # major semi-axis, nm
    r_y: float  # minor semi-axis, nm
    angle: float  # major-axis direction, rad in [0, pi)
    aspect_ratio: float
    height: float  # nm
    area: float  # nm^2


@dataclass(frozen=True)
class SegmentOptions:
    k_sigma: float = 5.0
    min_area: int = 20


def load_heightmap(image: str | Path, sidecar: Optional[str | Path] = None) -> HeightMap:
    """Read a plain-text grid or 16-bit PNG plus its JSON sidecar.

    The sidecar holds ``pixel_size_nm`` and, for PNG input, ``height_scale_nm``
    (nm per count) and optional ``height_offset_nm``. Without an explicit
    path the sidecar is ``<image stem>.json`` next to the image.
    """
    image = Path(image)
    sidecar = Path(sidecar) if sidecar is not None else image.with_suffix(".json")
    if not sidecar.exists():
        raise FileNotFoundError(f"sidecar not found: {sidecar}")
    meta = json.loads(sidecar.read_text())
    if image.suffix.lower() == ".png":
        from PIL import Image

        raw = np.asarray(Image.open(image), dtype=float)
        heights = raw * float(meta.get("height_scale_nm", 1.0)) + float(meta.get("height_offset_nm", 0.0))
    else:
        heights = np.loadtxt(image, ndmin=2)
    return HeightMap(heights, float(meta["pixel_size_nm"]))


def save_heightmap(hm: HeightMap, image: str | Path, fmt: str = "txt") -> Path:
    """Write ``hm`` as text grid or 16-bit PNG with a sidecar; returns the image path."""
    image = Path(image)
    meta = {"pixel_size_nm": hm.pixel_size}
    if fmt == "png":
        from PIL import Image

        lo = float(hm.heights.min())
        span = float(hm.heights.max()) - lo
        scale = span / 65535 if span > 0 else 1.0
        counts = np.round((hm.heights - lo) / scale).astype(np.uint16)
        Image.fromarray(counts).save(image)
        meta.update(height_scale_nm=scale, height_offset_nm=lo)
    else:
        np.savetxt(image, hm.heights, fmt="%.6f")
    image.with_suffix(".json").write_text(json.dumps(meta, indent=2))
    return image


def _plane(h: np.ndarray, mask: np.ndarray) -> np.ndarray:
    rows, cols = np.indices(h.shape)
    A = np.stack([np.ones(mask.sum()), cols[mask], rows[mask]], axis=1)
    coef = np.linalg.lstsq(A, h[mask], rcond=None)[0]
    return coef[0] + coef[1] * cols + coef[2] * rows


def _robust_sigma(x: np.ndarray) -> float:
    return 1.4826 * float(np.median(np.abs(x - np.median(x))))


def flatten(hm: HeightMap, k_sigma: float = 5.0, n_iter: int = 3) -> tuple[np.ndarray, float]:
    """Subtract a least-squares background plane; returns (heights, sigma_bg).

    Pixels above the running threshold are excluded from the plane fit.
    """
    h = hm.heights
    mask = np.ones(h.shape, dtype=bool)
    flat = h - _plane(h, mask)
    sigma = _robust_sigma(flat)
    for _ in range(n_iter):
        base = np.median(flat[mask])
        mask = flat <= base + k_sigma * max(sigma, 1e-12)
        if mask.sum() < 3:
            break
        flat = h - _plane(h, mask)
        sigma = _robust_sigma(flat[mask])
    return flat - np.median(flat[mask]), sigma


def segment(hm: HeightMap, opts: Optional[SegmentOptions] = None) -> list[np.ndarray]:
    """Connected dot regions as (N, 2) arrays of (row, col) indices."""
    opts = opts or SegmentOptions()
    flat, sigma = flatten(hm, opts.k_sigma)
    relief = float(np.ptp(flat))
    if relief < 1e-9:
        return []
    if sigma <= 0:
        # noiseless map: anything clearly above the background plane counts
        sigma = 1e-9 * relief
    labels, n = ndimage.label(flat > opts.k_sigma * sigma, structure=EIGHT_CONNECTED)
    if n == 0:
        return []
    regions = []
    order = np.argsort(labels.ravel(), kind="stable")
    sizes = np.bincount(labels.ravel(), minlength=n + 1)
    splits = np.split(order, np.cumsum(sizes)[:-1])
    cols = hm.shape[1]
    for lab in range(1, n + 1):
        flat_idx = splits[lab]
        if flat_idx.size < opts.min_area:
            continue
        regions.append(np.stack([flat_idx // cols, flat_idx % cols], axis=1))
    return regions


def fit_ellipse(region: np.ndarray, hm: HeightMap, flat: Optional[np.ndarray] = None) -> EllipseFit:
    """Ellipse from height-weighted second central moments of ``region``.

    Semi-axes are 2 sqrt(eigenvalue) of the moment matrix; the angle is that
    of the principal eigenvector.
    """
    if flat is None:
        flat, _ = flatten(hm)
    rows, cols = region[:, 0], region[:, 1]
    w = np.clip(flat[rows, cols], 0.0, None)
    if w.sum() <= 0:
        raise DegenerateRegionError("region has no positive height")
    x = cols * hm.pixel_size
    y = rows * hm.pixel_size
    cx = float(np.average(x, weights=w))
    cy = float(np.average(y, weights=w))
    dx, dy = x - cx, y - cy
    cov = np.array([
        [np.average(dx * dx, weights=w), np.average(dx * dy, weights=w)],
        [np.average(dx * dy, weights=w), np.average(dy * dy, weights=w)],
    ])
    evals, evecs = np.linalg.eigh(cov)
    if evals[0] <= 1e-12 * max(evals[1], 1e-300):
        raise DegenerateRegionError("collinear region")
    major = 2 * math.sqrt(evals[1])
    minor = 2 * math.sqrt(evals[0])
    vx, vy = evecs[:, 1]
    angle = math.atan2(vy, vx) % math.pi
    return EllipseFit(
        center=(cx, cy),
        r_x=major,
        r_y=minor,
        angle=angle,
        aspect_ratio=minor / major,
        height=float(flat[rows, cols].max()),
        area=math.pi * major * minor,
    )


def analyze(hm: HeightMap, opts: Optional[SegmentOptions] = None) -> list[EllipseFit]:
    opts = opts or SegmentOptions()
    flat, _ = flatten(hm, opts.k_sigma)
    fits = []
    for region in segment(hm, opts):
        try:
            fits.append(fit_ellipse(region, hm, flat))
        except DegenerateRegionError:
            continue
    return fits


def dot_density(n_dots: int, hm: HeightMap) -> float:
    """Dots per cm^2."""
    return n_dots / hm.area_cm2


def morphology_summary(fits: Sequence[EllipseFit], bin_deg: float = 15.0) -> dict:
    if not fits:
        raise ValueError("no ellipse fits to summarize")
    ar = np.array([f.aspect_ratio for f in fits])
    ang = np.degrees([f.angle for f in fits]) % 180.0
    edges = np.arange(0.0, 180.0 + bin_deg / 2, bin_deg)
    counts, _ = np.histogram(ang, bins=edges)
    diam = np.array([2 * math.sqrt(f.r_x * f.r_y) for f in fits])
    return {
        "n": len(fits),
        "mean_ar": float(ar.mean()),
        "std_ar": float(ar.std(ddof=1)) if ar.size > 1 else 0.0,
        "angle_histogram": [
            {"lo_deg": float(lo), "hi_deg": float(hi), "count": int(c)}
            for lo, hi, c in zip(edges[:-1], edges[1:], counts)
        ],
        "mean_diameter": float(diam.mean()),
    }


def gaussian_bump(shape, pixel_size: float, center, sigma_major: float, sigma_minor: float,
                  angle: float, amplitude: float) -> np.ndarray:
    """Elliptical Gaussian dot; lengths in nm, ``angle`` of the major axis in rad."""
    rows, cols = np.indices(shape)
    x = cols * pixel_size - center[0]
    y = rows * pixel_size - center[1]
    c, s = math.cos(angle), math.sin(angle)
    u = c * x + s * y
    v = -s * x + c * y
    return amplitude * np.exp(-0.5 * ((u / sigma_major) ** 2 + (v / sigma_minor) ** 2))


def synthetic_heightmap(
    n_dots: int,
    rng: np.random.Generator,
    size: int = 512,
    scan_nm: float = 2000.0,
    aspect_mean: float = 0.53,
    aspect_spread: float = 0.05,
    sigma_major: float = 20.0,
    amplitude: float = 10.0,
    noise: float = 0.1,
    tilt: tuple = (0.002, -0.001),
) -> tuple[HeightMap, list[dict]]:
    """Tilted, noisy map of non-overlapping elliptical Gaussian dots.

    Returns the map and the generating parameters of every dot.
    """
    pixel = scan_nm / size
    heights = np.zeros((size, size))
    margin = 6 * sigma_major
    placed: list[dict] = []
    attempts = 0
    while len(placed) < n_dots:
        attempts += 1
        if attempts > 10000:
            raise RuntimeError("could not place dots without overlap")
        cx, cy = rng.uniform(margin, scan_nm - margin, 2)
        if any(math.hypot(cx - d["x"], cy - d["y"]) < 2 * margin for d in placed):
            continue
        ar = float(np.clip(rng.normal(aspect_mean, aspect_spread), 0.05, 1.0))
        ang = float(rng.uniform(0, math.pi))
        placed.append({"x": cx, "y": cy, "aspect_ratio": ar, "angle": ang})
        heights += gaussian_bump(heights.shape, pixel, (cx, cy), sigma_major,
                                 sigma_major * ar, ang, amplitude)
    rows, cols = np.indices(heights.shape)
    heights += tilt[0] * cols + tilt[1] * rows
    heights += rng.normal(0.0, noise, heights.shape)
    return HeightMap(heights, pixel), placed
