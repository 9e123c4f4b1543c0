import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qdfss.doublet import ExcitonDoublet, FssCurvePoint, delta_e_hwp, delta_e_qwp, forward_curve
from qdfss.fssfit import (
    FitOptions,
    UnderdeterminedError,
    canonicalize,
    fit_cost,
    fit_hwp_scan,
    fit_qwp_scan,
    fit_scan,
    fit_uncertainty_mc,
    flip_branch,
    predict,
)
from qdfss.polar import ChannelParams

CHI = np.radians(np.arange(0, 180, 5))
GRID72 = np.linspace(0, math.pi, 72, endpoint=False)


def curve(s, theta, phi, p=0.0, kind="QWP", chi=CHI, sigma=1.0, offset=0.0):
    pts = forward_curve(ExcitonDoublet(800, s, p), ChannelParams(theta, phi), kind, chi, sigma)
    return [FssCurvePoint(pt.chi, pt.delta_e + offset, pt.sigma) for pt in pts]


def noisy(c, seed, scale=1.0):
    rng = np.random.Generator(np.random.PCG64(seed))
    return [FssCurvePoint(pt.chi, pt.delta_e + scale * pt.sigma * rng.standard_normal(), pt.sigma) for pt in c]


def test_qwp_noiseless_recovery_s17():
    r = fit_qwp_scan(curve(17.0, 1.0, 0.7))
    for got, want in zip((r.s, r.theta, r.phi), (17.0, 1.0, 0.7)):
        assert got == pytest.approx(want, rel=1e-6)
    assert r.p == 0.0 and r.converged
    assert abs(r.offset) < 1e-6


def test_qwp_noiseless_recovery_s79():
    assert fit_qwp_scan(curve(79.0, 2.2, -1.1)).s == pytest.approx(79.0, abs=1e-6)


def test_qwp_noisy_s29():
    r = fit_qwp_scan(noisy(curve(29.0, 0.8, 0.5), seed=1))
    assert abs(r.s - 29.0) < 3 * r.sigmas["s"]
    assert 0.2 < r.sigmas["s"] < 2.0


def test_hwp_examples():
    r = fit_hwp_scan(curve(49.0, 1.2, 0.0, kind="HWP"))
    assert r.s == pytest.approx(49.0, abs=1e-6)
    assert r.dipole_angle == pytest.approx(0.6, abs=1e-6)
    assert fit_hwp_scan(curve(10.0, 2.5, 0.0, kind="HWP")).s == pytest.approx(10.0, abs=1e-6)
    assert r.model.value == "HWP" and "phi" not in r.free


def test_constant_curve_is_unresolved():
    flat = [FssCurvePoint(c, 0.0, 1.0) for c in CHI]
    r = fit_hwp_scan(flat)
    assert r.s < 1e-3
    assert r.sigmas["s"] > 0
    assert r.unresolved and r.to_record("x")["unresolved"] is True


def test_offset_gives_epsilon():
    r = fit_qwp_scan(curve(40.0, 1.0, 0.3, offset=12.0), FitOptions(reference_energy=950.0))
    assert r.epsilon == pytest.approx(950.012, abs=1e-9)
    assert r.sigmas["epsilon"] == pytest.approx(1e-3 * r.sigmas["offset"])


def test_underdetermined():
    with pytest.raises(UnderdeterminedError, match="underdetermined"):
        fit_qwp_scan(curve(40.0, 1.0, 0.3, chi=np.radians([0, 45, 90, 135])))
    with pytest.raises(UnderdeterminedError):
        fit_qwp_scan(curve(40.0, 1.0, 0.3, chi=np.radians(np.arange(0, 60, 5))))


def test_nonpositive_sigma_rejected():
    with pytest.raises(ValueError):
        fit_qwp_scan(curve(40.0, 1.0, 0.3, sigma=0.0))


def test_canonicalize_examples():
    assert flip_branch((-17, 0.5, 0.2, 0.1)) == (17, 0.5 + math.pi, 0.2, -0.1)
    c = canonicalize((-17, 0.5, 0.2, 0.1))
    assert c[0] == 17 and 0 <= c[1] <= math.pi and -math.pi < c[2] <= math.pi and c[3] == -0.1
    assert canonicalize((17, 0.5, 0.2, 0.1)) == (17, 0.5, 0.2, 0.1)


@given(st.floats(-300, 300), st.floats(-20, 20), st.floats(-20, 20), st.floats(-0.9, 0.9),
       st.sampled_from(["QWP", "HWP"]))
def test_canonicalize_properties(s, theta, phi, p, kind):
    raw = (s, theta, phi, p)
    c = canonicalize(raw)
    assert c[0] >= 0 and 0 <= c[1] <= math.pi and -math.pi < c[2] <= math.pi and -1 <= c[3] <= 1
    assert canonicalize(c) == c
    ref = predict(kind, raw, GRID72)
    assert np.max(np.abs(predict(kind, c, GRID72) - ref)) <= 1e-12 * max(1.0, abs(s))


def test_round_trip_random_draws():
    rng = np.random.Generator(np.random.PCG64(2024))
    opts = FitOptions(fit_p=True)
    for _ in range(100):
        s, theta = rng.uniform(5, 250), rng.uniform(0, math.pi)
        phi, p = rng.uniform(-math.pi, math.pi), rng.uniform(-0.3, 0.3)
        c = curve(s, theta, phi, p)
        r = fit_qwp_scan(c, opts)
        assert r.s == pytest.approx(s, rel=1e-6)
        np.testing.assert_allclose(r.predict(CHI), [pt.delta_e for pt in c], atol=1e-6 * s)
        assert fit_cost("QWP", c, (s, theta, phi, p), 0.0) >= fit_cost("QWP", c, (r.s, r.theta, r.phi, r.p), r.offset) - 1e-12


def test_sigma_scaling_leaves_argmin():
    base = noisy(curve(60.0, 1.4, -0.6), seed=5)
    scaled = [FssCurvePoint(pt.chi, pt.delta_e, 3 * pt.sigma) for pt in base]
    a, b = fit_qwp_scan(base), fit_qwp_scan(scaled)
    assert (a.s, a.theta, a.phi) == pytest.approx((b.s, b.theta, b.phi), rel=1e-7)
    assert a.chi2_reduced == pytest.approx(9 * b.chi2_reduced, rel=1e-6)


def test_covariance_psd_and_chi2_positive():
    r = fit_qwp_scan(noisy(curve(80.0, 0.7, 2.0), seed=9), FitOptions(fit_p=True))
    idx = [k for k, name in enumerate(("s", "theta", "phi", "p", "offset")) if name in r.free]
    cov = r.covariance[np.ix_(idx, idx)]
    assert np.allclose(cov, cov.T)
    assert np.linalg.eigvalsh(cov).min() > -1e-12 * np.abs(cov).max()
    assert r.chi2_reduced > 0


def test_mc_agrees_with_covariance():
    out = fit_uncertainty_mc(noisy(curve(31.0, 1.1, 0.4), seed=3), n_trials=200, seed=1)
    assert out["s"] == pytest.approx(out["covariance_sigmas"]["s"], rel=0.3)


def test_mc_zero_noise_and_linear_scaling():
    c = curve(31.0, 1.1, 0.4)
    assert fit_uncertainty_mc(c, n_trials=100, noise_scale=0.0)["s"] < 1e-6
    c2 = curve(31.0, 1.1, 0.4, sigma=2.0)
    one = fit_uncertainty_mc(c, n_trials=100, seed=4)["s"]
    two = fit_uncertainty_mc(c2, n_trials=100, seed=4)["s"]
    assert two / one == pytest.approx(2.0, rel=0.1)


def test_mc_needs_100_trials():
    with pytest.raises(ValueError):
        fit_uncertainty_mc(curve(31.0, 1.1, 0.4), n_trials=10)


def test_record_fields():
    rec = fit_scan("QWP", curve(20.0, 1.0, 0.5)).to_record("dot-7")
    assert {"dot_id", "model", "s_ueV", "s_sigma_ueV", "theta_rad", "phi_rad", "p", "epsilon_meV",
            "chi2_reduced", "n_points"} <= rec.keys()
    assert rec["n_points"] == 36 and rec["dot_id"] == "dot-7"


def test_closed_forms_used_by_predict():
    np.testing.assert_array_equal(predict("QWP", (10, 1, 2, 0.1), CHI), delta_e_qwp(10, 0.1, 1, 2, CHI))
    np.testing.assert_array_equal(predict("HWP", (10, 1, 2, 0.1), CHI), delta_e_hwp(10, 0.1, 1, 2, CHI))
