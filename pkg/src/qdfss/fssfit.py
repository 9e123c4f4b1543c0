"""Recover splitting, channel and polarization from waveplate scans.

A scan is a list of :class:`~qdfss.doublet.FssCurvePoint` holding the centroid
deviation (ueV) at each waveplate angle. The QWP model has parameters
(s, theta, phi, p, offset); the HWP model cannot separate phi from theta and
fits (s, theta, p, offset) with phi = 0.

The model is invariant under (s, theta, p) -> (-s, theta + pi, -p) and under
(theta, phi) -> (-theta, phi + pi); :func:`canonicalize` picks the
representative with s >= 0, theta in [0, pi] and phi in (-pi, pi].
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .doublet import DarkMeasurementError, FssCurvePoint, delta_e_hwp, delta_e_qwp
from .lm import covariance_from_jacobian, levenberg_marquardt
from .polar import WaveplateKind

PARAM_NAMES = ("s", "theta", "phi", "p", "offset")
MIN_POINTS = 8
MIN_SPAN = math.pi / 2
TIE_COST = 1e-12


class UnderdeterminedError(ValueError):
    pass


class NoFitError(RuntimeError):
    pass


@dataclass(frozen=True)
class FitOptions:
    fit_p: bool = False
    fix_p: float = 0.0
    n_theta: int = 5
    n_phi: int = 5
    reference_energy: float = 0.0  # meV, added to the fitted offset


@dataclass
class FssFitResult:
    s: float  # ueV
    theta: float
    phi: float
    p: float
    epsilon: float  # meV
    sigmas: dict
    covariance: np.ndarray  # over PARAM_NAMES, offset in ueV
    chi2_reduced: float
    n_points: int
    model: WaveplateKind
    offset: float = 0.0  # ueV
    converged: bool = True
    free: tuple = field(default_factory=tuple)

    @property
    def dipole_angle(self) -> float:
        """Orientation of the high-energy eigenstate, folded to [0, pi)."""
        theta = -self.theta if math.cos(self.phi) < 0 else self.theta
        return (0.5 * theta) % math.pi

    @property
    def unresolved(self) -> bool:
        return not self.s > 2.0 * self.sigmas.get("s", 0.0)

    def predict(self, chi):
        return predict(self.model, (self.s, self.theta, self.phi, self.p), chi) + self.offset

    def to_record(self, dot_id: str = "") -> dict:
        return {
            "dot_id": dot_id,
            "model": self.model.value,
            "s_ueV": self.s,
            "s_sigma_ueV": self.sigmas["s"],
            "theta_rad": self.theta,
            "phi_rad": self.phi,
            "p": self.p,
            "epsilon_meV": self.epsilon,
            "chi2_reduced": self.chi2_reduced,
            "n_points": self.n_points,
            "dipole_rad": self.dipole_angle,
            "unresolved": self.unresolved,
            "converged": self.converged,
        }


def _wrap(angle: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.remainder(angle, 2 * math.pi)
    return math.pi if a == -math.pi else a


def flip_branch(params):
    """The sign-degeneracy map (s, theta, phi, p) -> (-s, theta + pi, phi, -p)."""
    s, theta, phi, p = params
    return (-s, theta + math.pi, phi, -p)


def canonicalize(params, return_signs: bool = False):
    """Map (s, theta, phi, p) to the canonical branch; predictions are unchanged.

    With ``return_signs`` also returns the derivative sign of each output
    with respect to its input (used to carry the covariance along).
    """
    s, theta, phi, p = (float(v) for v in params)
    sign = [1.0, 1.0, 1.0, 1.0]
    if s < 0:
        s, theta, phi, p = flip_branch((s, theta, phi, p))
        sign[0] = sign[3] = -1.0
    theta = _wrap(theta)
    if theta < 0:
        theta, phi = -theta, phi + math.pi
        sign[1] = -sign[1]
    phi = _wrap(phi)
    s = abs(s) if s == 0 else s
    p = 0.0 if p == 0 else p
    out = (s, theta, phi, p)
    return (out, tuple(sign)) if return_signs else out


def predict(model, params, chi):
    s, theta, phi, p = params
    chi = np.asarray(chi, float)
    if WaveplateKind(model) is WaveplateKind.QWP:
        return delta_e_qwp(s, p, theta, phi, chi)
    return delta_e_hwp(s, p, theta, phi, chi)


def _arrays(curve: Sequence[FssCurvePoint]):
    chi = np.array([pt.chi for pt in curve], float)
    y = np.array([pt.delta_e for pt in curve], float)
    sig = np.array([pt.sigma for pt in curve], float)
    return chi, y, sig


def _check(chi: np.ndarray, sig: np.ndarray):
    if chi.size < MIN_POINTS:
        raise UnderdeterminedError(
            f"underdetermined: {chi.size} points, need at least {MIN_POINTS}"
        )
    folded = np.sort(np.mod(chi, math.pi))
    if folded[-1] - folded[0] < MIN_SPAN - 1e-9:
        raise UnderdeterminedError("underdetermined: waveplate angles span less than 90 deg")
    if np.any(~(sig > 0)):
        raise ValueError("all curve sigmas must be > 0")


def _fit(model: WaveplateKind, curve, opts: FitOptions) -> FssFitResult:
    chi, y, sig = _arrays(curve)
    _check(chi, sig)
    qwp = model is WaveplateKind.QWP
    # free parameters, indices into PARAM_NAMES
    free = [0, 1] + ([2] if qwp else []) + ([3] if opts.fit_p else []) + [4]
    fixed = np.array([0.0, 0.0, 0.0, 0.0 if opts.fit_p else opts.fix_p, 0.0])

    def full(x):
        v = fixed.copy()
        v[free] = x
        return v

    def resid(x):
        v = full(x)
        try:
            m = predict(model, v[:4], chi) + v[4]
        except DarkMeasurementError:
            return np.full(chi.size, np.inf)
        return (m - y) / sig

    lower = np.full(len(free), -np.inf)
    upper = np.full(len(free), np.inf)
    if opts.fit_p:
        k = free.index(3)
        lower[k], upper[k] = -0.999, 0.999

    s0 = max(float(np.ptp(y)), 1e-3)
    off0 = float(np.mean(y))
    thetas = [(k + 0.5) * math.pi / opts.n_theta for k in range(opts.n_theta)]
    phis = [-math.pi + (k + 0.5) * 2 * math.pi / opts.n_phi for k in range(opts.n_phi)] if qwp else [0.0]

    candidates = []
    for th in thetas:
        for ph in phis:
            start = np.array([s0, th, ph, fixed[3], off0])[free]
            res = levenberg_marquardt(resid, start, lower=lower, upper=upper)
            if not np.isfinite(res.cost):
                continue
            candidates.append(res)
    if not candidates:
        raise NoFitError("no fit: every multi-start candidate failed")

    ranked = []
    for idx, res in enumerate(candidates):
        v = full(res.x)
        canon = canonicalize(v[:4])
        ranked.append((res.cost, canon, idx, res))
    best_cost = min(r[0] for r in ranked)
    ties = [r for r in ranked if r[0] - best_cost < TIE_COST]
    cost, canon, _, res = min(ties, key=lambda r: (r[1][1], abs(r[1][2]), r[2]))

    v = full(res.x)
    canon, signs = canonicalize(v[:4], return_signs=True)
    n = chi.size
    dof = max(n - len(free), 1)
    chi2_red = 2 * cost / dof
    cov_free, _ = covariance_from_jacobian(res.jac)
    if chi2_red > 1:
        cov_free = cov_free * chi2_red
    cov = np.zeros((5, 5))
    cov[np.ix_(free, free)] = cov_free
    d = np.array(list(signs) + [1.0])
    with np.errstate(invalid="ignore"):
        cov = cov * np.outer(d, d)
    sigmas = {name: float(math.sqrt(cov[k, k])) for k, name in enumerate(PARAM_NAMES) if k in free}
    sigmas["epsilon"] = sigmas["offset"] * 1e-3
    return FssFitResult(
        s=canon[0], theta=canon[1], phi=canon[2], p=canon[3],
        epsilon=opts.reference_energy + 1e-3 * v[4],
        sigmas=sigmas,
        covariance=cov,
        chi2_reduced=float(chi2_red),
        n_points=n,
        model=model,
        offset=float(v[4]),
        converged=bool(res.converged),
        free=tuple(PARAM_NAMES[k] for k in free),
    )


def fit_qwp_scan(curve: Sequence[FssCurvePoint], opts: Optional[FitOptions] = None) -> FssFitResult:
    """Weighted multi-start fit of a quarter-wave-plate scan."""
    return _fit(WaveplateKind.QWP, curve, opts or FitOptions())


def fit_hwp_scan(curve: Sequence[FssCurvePoint], opts: Optional[FitOptions] = None) -> FssFitResult:
    """Fit of a half-wave-plate scan; with p fixed at 0 this is (s/2)cos(4 chi - theta)."""
    return _fit(WaveplateKind.HWP, curve, opts or FitOptions())


def fit_scan(model, curve, opts: Optional[FitOptions] = None) -> FssFitResult:
    if WaveplateKind(model) is WaveplateKind.QWP:
        return fit_qwp_scan(curve, opts)
    return fit_hwp_scan(curve, opts)


def fit_cost(model, curve, params, offset: float) -> float:
    """Half the weighted chi-square of ``curve`` at the given parameters."""
    chi, y, sig = _arrays(curve)
    r = (predict(model, params, chi) + offset - y) / sig
    return 0.5 * float(r @ r)


def fit_uncertainty_mc(
    curve: Sequence[FssCurvePoint],
    model=WaveplateKind.QWP,
    opts: Optional[FitOptions] = None,
    n_trials: int = 200,
    seed: int = 0,
    noise_scale: float = 1.0,
) -> dict:
    """Parametric bootstrap of the parameter spreads.

    Noise with the curve's sigmas (times ``noise_scale``) is added to the
    best-fit model and the scan refitted ``n_trials`` times. Angle spreads
    are taken on differences wrapped to (-pi, pi].
    """
    if n_trials < 100:
        raise ValueError("n_trials must be >= 100")
    opts = opts or FitOptions()
    best = fit_scan(model, curve, opts)
    chi, _, sig = _arrays(curve)
    base = best.predict(chi)
    rng = np.random.Generator(np.random.PCG64(seed))
    rows = []
    for _ in range(n_trials):
        y = base + noise_scale * sig * rng.standard_normal(chi.size)
        trial = [FssCurvePoint(c, v, e) for c, v, e in zip(chi, y, sig)]
        r = fit_scan(model, trial, opts)
        rows.append([
            r.s - best.s,
            _wrap(r.theta - best.theta),
            _wrap(r.phi - best.phi),
            r.p - best.p,
            r.offset - best.offset,
        ])
    spread = np.std(np.array(rows), axis=0, ddof=1)
    out = {name: float(spread[k]) for k, name in enumerate(PARAM_NAMES) if name in best.free}
    out["n_trials"] = n_trials
    out["covariance_sigmas"] = dict(best.sigmas)
    return out
