"""Small damped least-squares (Levenberg-Marquardt) solver.

Shared by the line-shape fits and the waveplate-scan fits. Damping schedule:
lambda starts at 1e-3, is multiplied by 10 on a rejected step and divided by
10 on an accepted one. Iteration stops once the relative cost change of an
accepted step drops below ``rtol`` or after ``max_iter`` iterations.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


@dataclass
class LMResult:
    x: np.ndarray
    cost: float
    jac: np.ndarray
    n_iter: int
    converged: bool


def numeric_jacobian(fun, x, f0, rel_step=1e-7):
    jac = np.empty((f0.size, x.size))
    for k in range(x.size):
        h = rel_step * max(abs(x[k]), 1.0)
        xp = x.copy()
        xm = x.copy()
        xp[k] += h
        xm[k] -= h
        jac[:, k] = (fun(xp) - fun(xm)) / (2 * h)
    return jac


def levenberg_marquardt(
    fun: Callable[[np.ndarray], np.ndarray],
    x0,
    jac: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    lam0: float = 1e-3,
    rtol: float = 1e-10,
    max_iter: int = 200,
    lower=None,
    upper=None,
) -> LMResult:
    """Minimize ``0.5 * sum(fun(x)**2)``; ``fun`` returns weighted residuals.

    Optional ``lower``/``upper`` bounds are enforced by clipping trial steps.
    """
    x = np.array(x0, dtype=float)
    lo = None if lower is None else np.asarray(lower, float)
    hi = None if upper is None else np.asarray(upper, float)

    def clip(v):
        if lo is not None:
            v = np.maximum(v, lo)
        if hi is not None:
            v = np.minimum(v, hi)
        return v

    def jacobian(v, f):
        return jac(v) if jac is not None else numeric_jacobian(fun, v, f)

    x = clip(x)
    f = fun(x)
    cost = 0.5 * float(f @ f)
    J = jacobian(x, f)
    lam = lam0
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        g = J.T @ f
        A = J.T @ J
        diag = np.diag(A).copy()
        floor = 1e-12 * (diag.max() if diag.max() > 0 else 1.0)
        diag = np.maximum(diag, floor)
        accepted = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(A + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            x_new = clip(x + step)
            f_new = fun(x_new)
            cost_new = 0.5 * float(f_new @ f_new)
            if np.isfinite(cost_new) and cost_new <= cost:
                accepted = True
                break
            lam *= 10
        if not accepted:
            # no downhill step at any damping: stationary to machine precision
            converged = True
            break
        change = cost - cost_new
        x, f = x_new, f_new
        lam = max(lam / 10, 1e-12)
        J = jacobian(x, f)
        prev = cost
        cost = cost_new
        if cost == 0.0 or change <= rtol * prev:
            converged = True
            break
    return LMResult(x=x, cost=cost, jac=J, n_iter=it, converged=converged)


def covariance_from_jacobian(J: np.ndarray, rcond: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Return (covariance, identifiable) for weighted residuals with Jacobian ``J``.

    Parameters whose Jacobian column vanishes are unidentifiable; they are
    excluded from the inversion and get infinite variance.
    """
    norms = np.linalg.norm(J, axis=0)
    ident = norms > rcond * max(norms.max(), 1e-300)
    n = J.shape[1]
    cov = np.full((n, n), 0.0)
    idx = np.flatnonzero(ident)
    if idx.size:
        Js = J[:, idx]
        cov[np.ix_(idx, idx)] = np.linalg.pinv(Js.T @ Js, rcond=rcond, hermitian=True)
    for k in np.flatnonzero(~ident):
        cov[k, k] = np.inf
    return cov, ident
