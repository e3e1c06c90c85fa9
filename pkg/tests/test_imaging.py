from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from artifact.imaging import (CBConfig, Image, band_kernel, cb_image, fwhm, probe_line, wb_backpropagate, wb_image,
                              wigner_mode_amplitude, window)
from artifact.propagate import (Detector, analytic_measurement, SpectralField, assemble_measurement, ballistic, propagate_spectrum,
                                source_spectrum)
from artifact.randmedium import Grid3D
from artifact.source import SourceSpec, p0_radial

SRC = SourceSpec(epsilon=1 / 8, mu=2.0)
CB = CBConfig(r0=0.4, gamma_exp=0.5, epsilon=1 / 8, mu=2.0)


@pytest.fixture(scope="module")
def g48():
    return Grid3D(48, 3.0)


@pytest.fixture(scope="module")
def whole48(g48):
    return assemble_measurement(ballistic(SRC, 1.0, g48), None, None, Detector(side=None))


@pytest.fixture(scope="module")
def det64():
    g = Grid3D(64, 3.0)
    return assemble_measurement(ballistic(SRC, 1.0, g), None, None, Detector(side=0.5))


# ------------------------------------------------------------ helpers

def test_window_shape():
    s = np.linspace(0, 1.2, 121)
    w = window(s, 0.1)
    assert np.all(w[s <= 0.9] == 1) and np.all(w[s >= 1] == 0)
    assert np.all(np.diff(w) <= 0)
    assert window(0.95, 0.1) == pytest.approx(0.5)


@given(st.floats(-3.0, 3.0), st.floats(1.0, 10.0), st.floats(0.1, 5.0))
def test_band_kernel_matches_quadrature(s, q1, width):
    q2 = q1 + width
    ref, _ = integrate.quad(lambda q: q * q * np.cos(q * s), q1, q2, epsabs=1e-12, epsrel=1e-12)
    assert band_kernel(s, q1, q2) == pytest.approx(ref, rel=1e-8, abs=1e-8 * q2**3)


def test_band_kernel_series_branch_continuous():
    q2 = 10.0
    s = np.array([0.2 / q2 * (1 - 1e-9), 0.2 / q2 * (1 + 1e-9)])
    k = band_kernel(s, 2.0, q2)
    assert k[0] == pytest.approx(k[1], rel=1e-9)


def test_probe_line_and_offsets():
    pts = probe_line(0.5, 11)
    assert np.allclose(pts[5], 0)
    img = Image(pts, np.zeros(11))
    assert np.allclose(img.offsets(), np.linspace(-0.5, 0.5, 11))


def test_fwhm_gaussian():
    s = np.linspace(-5, 5, 2001)
    assert fwhm(s, np.exp(-s**2 / 2)) == pytest.approx(2 * np.sqrt(2 * np.log(2)), rel=1e-5)
    assert fwhm(s, np.ones_like(s)) == np.inf


def test_cb_config_rules():
    with pytest.raises(ValueError, match="subwavelength"):
        CBConfig(r0=0.1, gamma_exp=0.5, epsilon=1 / 16)
    with pytest.raises(ValueError, match="smaller than the detector side"):
        CB.check_detector(0.3)
    assert CB.rho == pytest.approx(CB.n_c * CB.epsilon)


# ------------------------------------------------------------ WB

def test_wb_full_functional_reconstructs_initial_data(g48, whole48):
    rec = wb_backpropagate(whole48, full=True)
    q0 = g48.to_real(source_spectrum(SRC, g48))
    assert np.linalg.norm(rec - q0) / np.linalg.norm(q0) < 1e-10


def test_wb_pressure_only_gives_half(whole48):
    img = wb_image(whole48, np.zeros((1, 3)))
    assert img.values[0] / p0_radial(SRC, 0.0)[0] == pytest.approx(0.5, rel=0.01)


def test_wb_probe_evaluation_matches_grid(g48, whole48):
    rec = wb_backpropagate(whole48)
    c = g48.n // 2
    pts = np.array([[0, 0, 0], [g48.spacing, 0, 0], [0, -2 * g48.spacing, g48.spacing]])
    vals = wb_image(whole48, pts).values
    assert np.allclose(vals, [rec[c, c, c], rec[c + 1, c, c], rec[c, c - 2, c + 1]], atol=1e-10)


def test_wb_linear(det64):
    pts = probe_line(0.1, 5)
    a = wb_image(det64, pts).values
    assert np.allclose(wb_image(det64.scaled(-2.5), pts).values, -2.5 * a, rtol=1e-13, atol=1e-14)


def test_wb_translation_covariance(g48):
    d = np.array([0.0, 3 * g48.spacing, -2 * g48.spacing])
    kx, ky, kz = g48.kvec()
    p0 = source_spectrum(SRC, g48) * np.exp(-1j * (kx * d[0] + ky * d[1] + kz * d[2]))
    meas = assemble_measurement(propagate_spectrum(p0, g48, 1.0), None, None, Detector(side=None))
    img = wb_backpropagate(meas)
    peak = np.array(np.unravel_index(np.argmax(img), img.shape))
    x = np.array([g48.axis(i)[peak[i]] for i in range(3)])
    assert np.all(np.abs(x - d) <= g48.spacing + 1e-12)


# ------------------------------------------------------------ CB

def test_cb_quadratic(det64):
    pts = probe_line(0.05, 3)
    a = cb_image(det64, pts, CB).values
    b = cb_image(det64.scaled(3.0), pts, CB).values
    assert np.allclose(b, 9 * a, rtol=1e-12)


def test_cb_zero_time_identity():
    # without transport the whole-box functional returns (2 pi)^3 |p0/sqrt 2|^2
    g = Grid3D(48, 3.0)
    meas = assemble_measurement(ballistic(SRC, 0.0, g), None, None, Detector(side=None), t=0.0)
    cfg = CBConfig(r0=10, gamma_exp=1.0, epsilon=1 / 8, mu=2.0, whole_box=True, n_theta=8, n_phi=16)
    val = cb_image(meas, np.zeros((1, 3)), cfg).values[0]
    assert val / ((2 * np.pi) ** 3 * p0_radial(SRC, 0.0)[0] ** 2 / 2) == pytest.approx(1.0, abs=2e-4)


def test_wigner_amplitude_against_brute_force(det64):
    # direct pair sum over every sample a with partner b = 2x - a inside the block
    meas = det64
    h = meas.spacing
    x = meas.origin + h * np.array([5.0, 5.5, 5.0])
    q = np.array([6.0, 2.0, -1.0])
    cfg = CB
    qhat = q / np.linalg.norm(q)
    w = (np.tensordot(qhat, meas.u[:3], axes=1) + meas.u[3]) / np.sqrt(2)
    X = np.stack(np.meshgrid(*[meas.axis(i) for i in range(3)], indexing="ij"), axis=-1)
    total = 0.0 + 0.0j
    for a in np.ndindex(*meas.shape):
        xa = X[a]
        bidx = np.rint((2 * x - xa - meas.origin) / h).astype(int)
        if np.any(bidx < 0) or np.any(bidx >= np.array(meas.shape)):
            continue
        y = X[tuple(bidx)] - xa
        chi = window(np.linalg.norm(y) / cfg.rho, cfg.rolloff)
        total += np.exp(1j * q @ y) * chi * w[a] * w[tuple(bidx)]
    ref = total * (2 * h) ** 3 / ((2 * np.pi) ** 3 * cfg.epsilon**3)
    val = wigner_mode_amplitude(meas, x, q, cfg)
    assert val == pytest.approx(ref, rel=1e-12)
    assert abs(val.imag) < 1e-12 * abs(val.real)


def test_wigner_rejects_ball_outside(det64):
    with pytest.raises(ValueError, match="leaves the detector"):
        wigner_mode_amplitude(det64, det64.origin, np.array([1.0, 0, 0]), CB)


@pytest.fixture(scope="module")
def resolved():
    # several wavelengths per ball and per pulse so the image is in its asymptotic regime
    src = SourceSpec(epsilon=1 / 32, mu=4.0)
    meas = analytic_measurement(src, 1.0, 0.0, Detector(side=0.5), Grid3D(128, 3.0))
    cfg = CBConfig(r0=6 / 32, gamma_exp=1.0, epsilon=1 / 32, mu=4.0, aperture=0.1)
    return meas, cfg


def test_cb_rolloff_insensitive(resolved):
    # the taper only rescales the effective ball volume; the peak shape is unchanged
    meas, cfg = resolved
    pts = probe_line(0.1, 5)
    a = cb_image(meas, pts, cfg).values
    b = cb_image(meas, pts, replace(cfg, rolloff=0.05)).values
    assert abs(b[2] / a[2] - 1) < 0.12
    np.testing.assert_allclose(b / b[2], a / a[2], atol=0.02)


def test_cb_peaks_at_source(resolved):
    meas, cfg = resolved
    pts = probe_line(0.3, 7)
    v = cb_image(meas, pts, cfg).values
    assert np.argmax(v) == 3


def test_cb_requires_detector_side(whole48):
    with pytest.raises(ValueError, match="whole_box"):
        cb_image(whole48, np.zeros((1, 3)), CB)


def test_spectral_field_add():
    g = Grid3D(8, 1.0)
    f = SpectralField(g, np.ones(g.rshape, complex))
    assert np.allclose((f + f).p, 2)
