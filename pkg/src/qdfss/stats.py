"""Population statistics over per-dot splitting results."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import optimize
from scipy import stats as sps


class Cohort(str, enum.Enum):
    SK_InP = "SK_InP"
    DE_InP = "DE_InP"
    DE_GaAs = "DE_GaAs"
    custom = "custom"

    @classmethod
    def parse(cls, label) -> Cohort:
        try:
            return cls(label)
        except ValueError:
            return cls.custom


@dataclass(frozen=True)
class DotRecord:
    dot_id: str
    cohort: Cohort
    wavelength: float  # nm
    s: float  # ueV
    s_sigma: float = 0.0
    dipole_angle: Optional[float] = None  # rad
    source_model: str = "QWP"

    def __post_init__(self):
        object.__setattr__(self, "cohort", Cohort.parse(self.cohort))
        if self.s < 0:
            raise ValueError(f"{self.dot_id}: splitting must be canonical (s >= 0)")
        if not self.wavelength > 0:
            raise ValueError(f"{self.dot_id}: wavelength must be > 0")


@dataclass(frozen=True)
class CohortSummary:
    n: int
    mean: float
    sem: float
    std: float
    min: float
    max: float
    fraction_below: dict = field(default_factory=dict)
    std_defined: bool = True

    def text(self, unit: str = "μeV") -> str:
        """Integer-rounded "mean ± SEM" line."""
        return f"{self.mean:.0f} ± {self.sem:.0f} {unit}".rstrip()

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "mean": self.mean,
            "sem": self.sem,
            "std": self.std,
            "min": self.min,
            "max": self.max,
            "fraction_below": {str(k): v for k, v in self.fraction_below.items()},
            "std_defined": self.std_defined,
        }


def _values(records) -> np.ndarray:
    vals = [r.s if isinstance(r, DotRecord) else float(r) for r in records]
    if not vals:
        raise ValueError("empty cohort")
    return np.asarray(vals, dtype=float)


def fraction_below(records, threshold: float) -> float:
    v = _values(records)
    return float(np.count_nonzero(v < threshold)) / v.size


def summarize(records, thresholds: Sequence[float] = (40.0,)) -> CohortSummary:
    """Sample mean, sample standard deviation (n - 1) and SEM = std / sqrt(n).

    A single record has no sample spread: std and sem are reported as 0 with
    ``std_defined`` False.
    """
    v = _values(records)
    n = v.size
    defined = n > 1
    std = float(np.std(v, ddof=1)) if defined else 0.0
    return CohortSummary(
        n=n,
        mean=float(np.mean(v)),
        sem=std / math.sqrt(n),
        std=std,
        min=float(v.min()),
        max=float(v.max()),
        fraction_below={float(t): fraction_below(v, t) for t in thresholds},
        std_defined=defined,
    )


def improvement_metrics(a, b) -> dict:
    """Compare mean ``a`` against baseline mean ``b``.

    ratio = a / b and percent_change = (a - b) / b * 100.
    """
    ma = a.mean if isinstance(a, CohortSummary) else float(a)
    mb = b.mean if isinstance(b, CohortSummary) else float(b)
    if mb == 0:
        raise ValueError("baseline mean is zero")
    ratio = ma / mb
    change = (ma - mb) / mb * 100.0
    return {
        "ratio": ratio,
        "percent_change": change,
        "ratio_text": f"more than {math.floor(ratio)}x" if ratio > 1 else f"{ratio:.2f}x",
        "percent_text": f"{change:.0f}%",
    }


def wavelength_correlation(records=None, wavelengths=None, splittings=None) -> dict:
    """Pearson r between wavelength and splitting, two-sided p from the t statistic."""
    if records is not None:
        wavelengths = [r.wavelength for r in records]
        splittings = [r.s for r in records]
    x = np.asarray(wavelengths, float)
    y = np.asarray(splittings, float)
    n = x.size
    if n < 3:
        raise ValueError("need at least 3 records")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise ValueError("degenerate: zero variance in wavelength or splitting")
    r = float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))
    if abs(r) == 1.0:
        t, pval = math.copysign(math.inf, r), 0.0
    else:
        t = r * math.sqrt((n - 2) / (1 - r * r))
        pval = float(2 * sps.t.sf(abs(t), n - 2))
    return {"r": r, "t": t, "p_value": pval, "n": n}


def histogram(records, bin_width: float) -> list[tuple[float, float, int]]:
    """Left-closed bins [k w, (k+1) w) starting at 0."""
    if not bin_width > 0:
        raise ValueError("bin width must be positive")
    v = _values(records)
    idx = np.floor(v / bin_width).astype(int)
    counts = np.bincount(idx, minlength=int(idx.max()) + 1)
    return [(k * bin_width, (k + 1) * bin_width, int(c)) for k, c in enumerate(counts)]


def polar_table(records: Iterable[DotRecord]) -> list[tuple[float, float]]:
    """(dipole angle folded to [0, pi), s) for records that carry an angle."""
    out = []
    for r in records:
        if r.dipole_angle is None or not math.isfinite(r.dipole_angle):
            continue
        out.append((r.dipole_angle % math.pi, r.s))
    return out


def by_cohort(records: Iterable[DotRecord]) -> dict:
    groups: dict = {}
    for r in records:
        groups.setdefault(r.cohort.value, []).append(r)
    return dict(sorted(groups.items()))


def _match_power(z: np.ndarray, target_cv: float) -> float:
    def cv(b):
        w = z ** b
        return np.std(w, ddof=1) / np.mean(w) - target_cv

    lo, hi = 1e-3, 1.0
    while cv(hi) < 0 and hi < 64:
        hi *= 2
    return optimize.brentq(cv, lo, hi, xtol=1e-14)


def synthetic_cohort(mean: float, std: float, n: int, rng: np.random.Generator,
                     lower: float = 0.0) -> np.ndarray:
    """Draw ``n`` splittings from N(mean, std^2) truncated below ``lower``.

    The draw is then moment-matched with a monotone map
    x -> lower + a (x - lower)^b so the sample mean and sample standard
    deviation equal ``mean`` and ``std`` exactly while every value stays above
    ``lower``. Used to build synthetic cohorts with prescribed moments.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    out = np.empty(0)
    while out.size < n:
        draw = rng.normal(mean, std, 2 * n)
        out = np.concatenate([out, draw[draw > lower]])
    z = out[:n] - lower
    b = _match_power(z, std / (mean - lower))
    w = z ** b
    return lower + (mean - lower) * w / np.mean(w)


REPORTED_COHORTS = {
    Cohort.SK_InP: {"mean": 176.0, "std": 58.8, "n": 43, "wavelength": 1550.0},
    Cohort.DE_InP: {"mean": 42.0, "std": 17.7, "n": 78, "wavelength": 1550.0},
    Cohort.DE_GaAs: {"mean": 42.0, "std": 30.5, "n": 58, "wavelength": 900.0},
}


def reported_cohort_records(seed: int = 0, wavelength_spread: float = 30.0,
                          sk_lower: float = 0.0) -> list[DotRecord]:
    """Synthetic cohorts with the three reported means, spreads and sizes."""
    rng = np.random.Generator(np.random.PCG64(seed))
    records = []
    for cohort, moments in REPORTED_COHORTS.items():
        lower = sk_lower if cohort is Cohort.SK_InP else 0.0
        s = synthetic_cohort(moments["mean"], moments["std"], moments["n"], rng, lower=lower)
        wl = moments["wavelength"] + wavelength_spread * (rng.random(s.size) - 0.5)
        angles = rng.uniform(0, math.pi, s.size)
        for k in range(s.size):
            records.append(DotRecord(
                dot_id=f"{cohort.value}-{k:03d}", cohort=cohort, wavelength=float(wl[k]),
                s=float(s[k]), s_sigma=1.0, dipole_angle=float(angles[k]),
            ))
    return records
