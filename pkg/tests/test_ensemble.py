from __future__ import annotations

import math
import warnings
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from artifact.config import from_dict
from artifact.ensemble import (TheoryParams, amplitude_factor, fit_exponent, jackknife_variance, point_stats,
                               predicted_slope, run_ensemble, support_width, theory_predict)

SMOKE = dict(source=dict(epsilon=0.25, mu=1.5), medium=dict(sigma0=0.05, eta=1.0), noise=dict(sigma_n=0.02),
             grid=dict(n=32, box=3.0), detector=dict(side=0.8), cb=dict(r0=0.5, gamma=0.5, n_theta=4, n_phi=8),
             ensemble=dict(n_realizations=8, n_probe=5, sweep_axis="sigma0", sweep_values=[0.02, 0.05]))


# ------------------------------------------------------------ jackknife


def test_jackknife_matches_direct_leave_one_out():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(12, 4))
    var, err = jackknife_variance(x)
    loo = np.array([np.delete(x, i, axis=0).var(axis=0, ddof=1) for i in range(12)])
    ref = np.sqrt(11 / 12 * ((loo - loo.mean(axis=0)) ** 2).sum(axis=0))
    np.testing.assert_allclose(var, x.var(axis=0, ddof=1), rtol=1e-12)
    np.testing.assert_allclose(err, ref, rtol=1e-9)


def test_jackknife_error_on_gaussian_samples():
    # the variance estimator of N(0, s^2) has standard error s^2 sqrt(2/(n-1))
    rng = np.random.default_rng(0)
    n, s = 400, 1.7
    x = rng.normal(scale=s, size=(n, 200))
    var, err = jackknife_variance(x)
    assert abs(var.mean() / s**2 - 1) < 0.01
    assert abs(err.mean() / (s**2 * math.sqrt(2 / (n - 1))) - 1) < 0.05
    # the spread of the estimates across columns agrees with the quoted error
    assert abs(var.std() / err.mean() - 1) < 0.15


def test_jackknife_needs_three():
    with pytest.raises(ValueError):
        jackknife_variance(np.zeros((2, 3)))


def test_error_bars_shrink_with_sample_size():
    rng = np.random.default_rng(1)
    e1 = jackknife_variance(rng.normal(size=(200, 400)))[1].mean()
    e2 = jackknife_variance(rng.normal(size=(800, 400)))[1].mean()
    assert e1 / e2 == pytest.approx(2.0, rel=0.05)


def test_deterministic_samples_have_zero_variance():
    ps = point_stats(np.tile([1.0, -2.0, 3.0], (10, 1)))
    np.testing.assert_allclose(ps.var, 0, atol=1e-24)
    np.testing.assert_allclose(ps.var_err, 0, atol=1e-12)
    assert np.all(np.isinf(ps.snr))


# ------------------------------------------------------------ exponent fits


@given(st.floats(-4, 4), st.floats(0.1, 10))
def test_fit_exact_power_law(p, c):
    x = np.array([1.0, 2.0, 4.0, 8.0, 16.0])
    r = fit_exponent(x, c * x**p)
    assert r.slope == pytest.approx(p, abs=1e-10)
    assert r.stderr < 1e-8


def test_fit_noisy_power_law():
    rng = np.random.default_rng(5)
    x = np.geomspace(1, 16, 8)
    y = x**2 * np.exp(rng.normal(scale=0.05, size=x.size))
    r = fit_exponent(x, y, yerr=0.05 * y)
    assert abs(r.slope - 2) < 0.1
    assert 0 < r.stderr < 0.1


def test_fit_rejects_short_sweeps():
    with pytest.raises(ValueError, match="factor"):
        fit_exponent([1, 1.5, 2, 3], [1, 2, 3, 4])
    with pytest.raises(ValueError, match=">= 4"):
        fit_exponent([1, 4, 16], [1, 2, 3])


def test_fit_warns_and_drops_nonpositive():
    with pytest.warns(RuntimeWarning, match="excluding 1"):
        r = fit_exponent([1, 2, 4, 8, 16], [1, 4, -1, 64, 256])
    assert r.n_used == 4
    assert r.slope == pytest.approx(2.0)


# ------------------------------------------------------------ support width


def test_support_width_gaussian():
    s = np.linspace(-3, 3, 601)
    w = 0.7
    sw = support_width(s, np.exp(-0.5 * (s / w) ** 2), level=0.1)
    assert not sw.exceeds_range
    assert sw.width == pytest.approx(math.sqrt(2 * math.log(10)) * w, rel=1e-3)


def test_support_width_takes_wider_side():
    s = np.linspace(-2, 2, 401)
    v = np.where(s > 0, np.exp(-0.5 * (s / 0.3) ** 2), np.exp(-0.5 * (s / 0.6) ** 2))
    assert support_width(s, v).width == pytest.approx(math.sqrt(2 * math.log(10)) * 0.6, rel=1e-3)


def test_support_width_flat_profile_exceeds_range():
    s = np.linspace(-0.5, 0.5, 11)
    sw = support_width(s, np.ones_like(s))
    assert sw.exceeds_range and sw.width == pytest.approx(0.5)


# ------------------------------------------------------------ scaling oracle

BASE = TheoryParams(sigma0=0.1, sigma_n=0.05, delta=0.5, eta=1.0, epsilon=1 / 64, mu=4.0, n_c=4.0, l=0.5)


def test_theory_noise_laws():
    t = theory_predict(BASE)
    assert t.v_w == pytest.approx(0.01)
    assert t.v_w_n == pytest.approx(0.0025)
    assert t.v_c_n == pytest.approx(0.0025 * BASE.epsilon**4 * 4.0**4)
    assert t.snr_w == pytest.approx(10.0)
    assert t.snr_w_n == pytest.approx(20.0)
    # aperture factor min((L/rho)^2, mu^2) with rho = N_C lambda = 1/16
    assert t.snr_c_n == pytest.approx(20.0 * min(16.0**2, 16.0))
    assert not t.extrapolated


@pytest.mark.parametrize("field,axis,p", [("v_w", "sigma0", 2), ("v_c", "sigma0", 2), ("v_w_n", "sigma_n", 2),
                                          ("v_c_n", "sigma_n", 2), ("v_c_n", "n_c", 4)])
def test_theory_power_laws(field, axis, p):
    a = getattr(theory_predict(BASE), field)
    b = getattr(theory_predict(replace(BASE, **{axis: 2 * getattr(BASE, axis)})), field)
    assert b / a == pytest.approx(2.0**p)


def test_theory_totals_are_minima():
    t = theory_predict(BASE)
    assert t.snr_c_tot == min(t.snr_c, t.snr_c_n)
    assert t.snr_w_tot == min(t.snr_w, t.snr_w_n)


@given(st.floats(0.0, 1.99), st.floats(0.05, 1.0), st.floats(1.5, 8.0), st.floats(1.0, 16.0))
def test_theory_continuous_across_switches(delta, eta, mu, n_c):
    # the min/max branches join continuously: a tiny step never jumps
    p = TheoryParams(0.1, 0.05, delta, eta, 1 / 128, mu, n_c, 0.5)
    q = replace(p, n_c=n_c * (1 + 1e-9), mu=mu * (1 + 1e-9), delta=delta + 1e-9)
    a, b = theory_predict(p), theory_predict(q)
    for f in ("v_c", "v_c_first", "snr_c", "snr_c_n", "amplitude_c"):
        assert getattr(b, f) == pytest.approx(getattr(a, f), rel=1e-6)


def test_theory_flags_extrapolation():
    t = theory_predict(replace(BASE, mu=0.5))
    assert t.extrapolated and any("mu" in n for n in t.notes)
    assert theory_predict(replace(BASE, delta=2.5)).extrapolated


def test_theory_attenuation_damps_signal_terms():
    a, b = theory_predict(BASE), theory_predict(replace(BASE, Sigma=0.5))
    assert b.v_w / a.v_w == pytest.approx(math.exp(-0.5))
    assert b.v_c / a.v_c == pytest.approx(math.exp(-1.0))
    assert b.v_w_n == a.v_w_n


def test_amplitude_factor_saturates():
    eps, mu = 1 / 64, 4.0
    assert amplitude_factor(eps, 1.0, 4 * eps, mu) == pytest.approx((4 * eps * mu) ** 2)
    assert amplitude_factor(eps, 1.0, 0.5, mu) == pytest.approx(1.0)
    assert theory_predict(BASE).amplitude_c == pytest.approx(amplitude_factor(BASE.epsilon, 1.0, 4 * BASE.epsilon, 4.0))


def test_lambda_m_needs_noise_below_one():
    t = theory_predict(replace(BASE, sigma_n=0.0))
    assert math.isnan(t.lambda_m)
    t = theory_predict(BASE)
    assert t.lambda_m > 0


# ------------------------------------------------------------ ensemble runs


@pytest.fixture(scope="module")
def smoke():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cfg = from_dict(SMOKE)
        return cfg, run_ensemble(cfg.ensemble, cfg)


def test_ensemble_shapes(smoke):
    cfg, st_ = smoke
    assert st_.complete and st_.n_completed == 8
    assert set(st_.samples) == {"WB/single", "WB/noise", "CB/single", "CB/noise"}
    for v in st_.samples.values():
        assert v.shape == (2, 8, 5)
    assert st_.center_index() == 2


def test_ensemble_linear_in_sigma0(smoke):
    # WB is linear in the data: the Born fluctuation scales with sigma0 exp(-Sigma/2), Sigma itself ~ sigma0^2
    _, st_ = smoke
    v = st_.at_center("WB/single")["var"]
    s1, s2 = st_.sigma
    assert v[1] / v[0] == pytest.approx((0.05 / 0.02) ** 2 * math.exp(-(s2 - s1)), rel=1e-9)


def test_ensemble_reproducible_across_threads(smoke):
    cfg, st_ = smoke
    cfg4 = replace(cfg, ensemble=replace(cfg.ensemble, threads=3))
    other = run_ensemble(cfg4.ensemble, cfg4)
    for k in st_.samples:
        np.testing.assert_array_equal(other.samples[k], st_.samples[k])


def test_ensemble_seed_changes_samples(smoke):
    cfg, st_ = smoke
    cfg2 = replace(cfg, ensemble=replace(cfg.ensemble, base_seed=7, sweep_values=(0.05,),
                                         functionals=("WB",), components=("noise",)))
    other = run_ensemble(cfg2.ensemble, cfg2)
    assert not np.allclose(other.samples["WB/noise"][0], st_.samples["WB/noise"][1])


def test_predicted_slope_sigma0(smoke):
    cfg, st_ = smoke
    s1, s2 = st_.sigma
    assert predicted_slope(cfg, "WB/single") == pytest.approx(2.0 - (s2 - s1) / math.log(2.5), rel=1e-9)
    assert predicted_slope(cfg, "WB/noise") == pytest.approx(0.0, abs=1e-12)
