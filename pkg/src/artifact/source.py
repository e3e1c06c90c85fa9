"""Isotropic band-limited initial pressure p0.

    p0(x) = mu eps^3 int g(eps mu (|k| - k0/eps)) e^{-i k.x} dk

concentrated on the shell |k| ~ k0/eps with width 1/(eps mu). Its standard
Fourier transform is (2 pi)^3 times the integrand profile.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate


def _gauss(s):
    return np.exp(-0.5 * np.square(s))


def _sech(s):
    return 1.0 / np.cosh(np.clip(s, -700, 700))


# name -> (g, integral of g over R, |s| beyond which g < 1e-13 g(0))
PROFILES = {
    "gaussian": (_gauss, np.sqrt(2 * np.pi), np.sqrt(2 * np.log(1e13))),
    "sech": (_sech, np.pi, np.log(2e13)),
}


@dataclass(frozen=True)
class SourceSpec:
    k0: float = 1.0
    epsilon: float = 1.0 / 16
    mu: float = 2.0
    profile: str = "gaussian"

    def __post_init__(self):
        if self.k0 <= 0:
            raise ValueError("k0 must be positive")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.mu <= 1:
            raise ValueError(f"mu must exceed 1, got {self.mu}")
        if self.mu**2 * self.epsilon >= 1:
            raise ValueError(f"broadband condition mu^2 eps < 1 violated: {self.mu**2 * self.epsilon:.3g}")
        if self.profile not in PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}; choose from {sorted(PROFILES)}")

    @property
    def g(self):
        return PROFILES[self.profile][0]

    @property
    def g_integral(self) -> float:
        return PROFILES[self.profile][1]

    @property
    def s_cut(self) -> float:
        return PROFILES[self.profile][2]

    @property
    def k_center(self) -> float:
        return self.k0 / self.epsilon

    @property
    def bandwidth(self) -> float:
        """Shell half-width unit 1/(eps mu)."""
        return 1.0 / (self.epsilon * self.mu)

    @property
    def k_min(self) -> float:
        return max(0.0, self.k_center - self.s_cut * self.bandwidth)

    @property
    def k_max(self) -> float:
        """Wavenumber beyond which the profile is treated as exactly zero."""
        return self.k_center + self.s_cut * self.bandwidth

    @property
    def envelope_width(self) -> float:
        return self.epsilon * self.mu


def spectral_profile(spec: SourceSpec, k) -> np.ndarray:
    """mu eps^3 g(eps mu (|k| - k0/eps)); k may be a magnitude or a (..., 3) vector."""
    k = np.asarray(k, dtype=float)
    kmag = np.linalg.norm(k, axis=-1) if k.ndim and k.shape[-1] == 3 else np.abs(k)
    s = spec.epsilon * spec.mu * (kmag - spec.k_center)
    out = spec.mu * spec.epsilon**3 * spec.g(s)
    return np.where(np.abs(s) <= spec.s_cut, out, 0.0)


def source_fourier(spec: SourceSpec, kmag) -> np.ndarray:
    """Standard Fourier transform of p0 at |k|: (2 pi)^3 times the profile."""
    return (2 * np.pi) ** 3 * spectral_profile(spec, kmag)


def p0_radial(spec: SourceSpec, r) -> np.ndarray:
    """p0 as a function of |x| by oscillatory quadrature of the shell integral.

    p0(r) = 4 pi int P(k) k^2 sin(k r)/(k r) dk over the (truncated) shell.
    """
    r = np.atleast_1d(np.asarray(r, dtype=float))
    a, b = spec.k_min, spec.k_max
    # split the shell so quad sees the peak
    pts = [a, max(a, spec.k_center - 2 * spec.bandwidth), spec.k_center,
           spec.k_center + 2 * spec.bandwidth, b]
    pts = sorted(set(pts))
    out = np.empty_like(r)
    for i, ri in enumerate(r):
        total = 0.0
        for lo, hi in zip(pts[:-1], pts[1:]):
            if ri == 0:
                f = lambda k: spectral_profile(spec, k) * k**2
                val, err = integrate.quad(f, lo, hi, limit=200, epsabs=0, epsrel=1e-12)
            else:
                f = lambda k: spectral_profile(spec, k) * k / ri
                val, err = integrate.quad(f, lo, hi, weight="sin", wvar=ri, limit=400,
                                          epsabs=0, epsrel=1e-12)
            if not np.isfinite(val) or abs(err) > 1e-6 * max(abs(val), 1e-300) + 1e-12:
                warnings.warn(f"p0 quadrature may not have converged at r={ri:.4g} (err {err:.2e})",
                              RuntimeWarning, stacklevel=2)
            total += val
        out[i] = 4 * np.pi * total
    return out


def evaluate_p0(spec: SourceSpec, x) -> np.ndarray:
    """p0 at positions x (shape (..., 3)); isotropic, so only |x| matters."""
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1)
    return p0_radial(spec, r.ravel()).reshape(r.shape)


def p0_origin_series(spec: SourceSpec) -> float:
    """4 pi k0^2 int g(s) (1 + s/(k0 mu))^2 ds, the substituted shell integral at x = 0."""
    lo = max(-spec.s_cut, -spec.k0 * spec.mu)
    f = lambda s: spec.g(s) * (1 + s / (spec.k0 * spec.mu)) ** 2
    val, _ = integrate.quad(f, lo, spec.s_cut, epsabs=0, epsrel=1e-13, limit=200)
    return 4 * np.pi * spec.k0**2 * val
