"""Attenuation of the coherent field: transport rate Sigma and Rayleigh rate gamma.

Sigma at the central wavenumber k0/eps, in rescaled time units:

    Sigma = (eta^3 sigma0^2 / eps) * pi k0^4 / (2 (2 pi)^3) * int_{S^2} Rhat(eta k0 |khat - phat|) dphat

With x = khat.phat the sphere integral is 2 pi int_{-1}^{1} Rhat(eta k0 sqrt(2 (1 - x))) dx,
whose only singularity for delta > 0 is the forward point x = 1.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .randmedium import MediumSpec, correlation_exact
from .source import SourceSpec

_PREFACTOR = np.pi / (2 * (2 * np.pi) ** 3)


@dataclass(frozen=True)
class AttenuationResult:
    sigma_total: float
    gamma_eps: float
    method: str


def _sphere_integral(medium: MediumSpec, k0: float) -> float:
    """int over S^2 of Rhat(eta k0 |khat - phat|) dphat, adaptive in x = cos(theta)."""
    a = medium.eta * k0 * np.sqrt(2.0)
    if medium.delta == 0:
        f = lambda x: medium.envelope(a * np.sqrt(max(1.0 - x, 0.0)))
        val, err = integrate.quad(f, -1.0, 1.0, epsabs=0, epsrel=1e-12, limit=200)
    else:
        # Rhat = S(q) q^-delta with q = a (1 - x)^(1/2): pull out the algebraic weight
        f = lambda x: medium.envelope(a * np.sqrt(max(1.0 - x, 0.0))) * a ** (-medium.delta)
        val, err = integrate.quad(f, -1.0, 1.0, weight="alg", wvar=(0.0, -medium.delta / 2),
                                  epsabs=0, epsrel=1e-12, limit=200)
    if abs(err) > 1e-8 * abs(val):
        warnings.warn(f"sphere quadrature error estimate {err:.2e} is large", RuntimeWarning, stacklevel=3)
    return 2 * np.pi * val


def sigma_quadrature(medium: MediumSpec, source: SourceSpec) -> float:
    """Sigma by adaptive sphere quadrature of the scattering cross section."""
    if medium.sigma0 == 0:
        return 0.0
    pref = medium.eta**3 * medium.sigma0**2 / source.epsilon * _PREFACTOR * source.k0**4
    return float(pref * _sphere_integral(medium, source.k0))


def sigma_shortrange_closed(medium: MediumSpec, source: SourceSpec) -> float:
    """Rayleigh limit: (eta^3 sigma0^2 / eps) pi k0^4 Rhat(0) / (2 pi)^2 (delta = 0)."""
    if medium.delta != 0:
        raise ValueError("short-range form requires delta = 0")
    rhat0 = float(medium.rhat(0.0))
    return medium.eta**3 * medium.sigma0**2 / source.epsilon * np.pi * source.k0**4 * rhat0 / (2 * np.pi) ** 2


def sigma_longrange_closed(medium: MediumSpec, source: SourceSpec) -> float:
    """Sigma = sigma0^2 eta^(3-delta) k0^(4-delta) S(0) / (eps 2^delta 4 pi (1 - delta/2)).

    Exact for a flat envelope; leading order when eta k0 is small otherwise.
    """
    d = medium.delta
    if not 0 < d < 2:
        raise ValueError(f"long-range form requires delta in (0, 2), got {d} (Sigma diverges as delta -> 2)")
    s0 = float(medium.envelope(0.0))
    return (medium.sigma0**2 * medium.eta ** (3 - d) * source.k0 ** (4 - d) * s0
            / (source.epsilon * 2**d * 4 * np.pi * (1 - d / 2)))


def gamma_eps(medium: MediumSpec, source: SourceSpec) -> float:
    """Rayleigh absorption rate at the central wavenumber, taken as Sigma/2."""
    return 0.5 * sigma_quadrature(medium, source)


def gamma_eps_direct(medium: MediumSpec, source: SourceSpec, r_max: float = 60.0) -> float:
    """gamma = (sigma0^2 k0^2 eta / (4 eps)) int_0^inf (1 - cos(2 eta k0 r)) R(r) dr.

    Evaluated from the real-space correlation. Slow: each R(r) is itself a
    Hankel quadrature. For delta > 0 the tail beyond r_max uses the power-law
    asymptote R ~ c_delta S(0) r^(delta - 3).
    """
    if medium.sigma0 == 0:
        return 0.0
    w = 2 * medium.eta * source.k0
    if medium.delta == 0 and medium.spectrum == "gaussian":
        ks = medium.k_s
        corr = lambda r: np.exp(-(ks * r) ** 2 / 4) * medium.S0 * ks**3 / (8 * np.pi**1.5)
        r_max = 40.0 / ks
    else:
        corr = lambda r: float(correlation_exact(medium, r)[0])
    f = lambda r: 2 * np.sin(w * r / 2) ** 2 * corr(r)
    body, _ = integrate.quad(f, 0.0, r_max, limit=500, epsrel=1e-9)
    tail = 0.0
    if medium.delta > 0:
        d = medium.delta
        c = special.gamma((3 - d) / 2) / (2**d * np.pi**1.5 * special.gamma(d / 2)) * float(medium.envelope(0.0))
        osc, _ = integrate.quad(lambda r: r ** (d - 3), r_max, np.inf, weight="cos", wvar=w)
        tail = c * (r_max ** (d - 2) / (2 - d) - osc)
    return medium.sigma0**2 * source.k0**2 * medium.eta / (4 * source.epsilon) * (body + tail)


def attenuation(medium: MediumSpec, source: SourceSpec) -> AttenuationResult:
    sigma = sigma_quadrature(medium, source)
    return AttenuationResult(sigma_total=sigma, gamma_eps=sigma / 2, method="quadrature")


def one_minus_cos_integral(delta: float) -> float:
    """int_0^inf (1 - cos r) r^(delta - 3) dr for delta in (0, 2).

    Split at r = 1: the head has an algebraic weight r^(delta - 1) after
    factoring (1 - cos r)/r^2; the tail is the analytic power integral minus
    an oscillatory Fourier integral.
    """
    if not 0 < delta < 2:
        raise ValueError("delta must lie in (0, 2)")
    smooth = lambda r: 2 * np.sin(r / 2) ** 2 / r**2 if r > 0 else 0.5
    head, _ = integrate.quad(smooth, 0.0, 1.0, weight="alg", wvar=(delta - 1, 0.0), epsabs=0, epsrel=1e-13)
    osc, err, info = integrate.quad(lambda r: r ** (delta - 3), 1.0, np.inf, weight="cos", wvar=1.0,
                                    epsabs=1e-15, limlst=200, full_output=1)[:3]
    if abs(err) > 1e-9 * max(abs(osc), 1.0):
        warnings.warn(f"oscillatory tail error estimate {err:.2e}", RuntimeWarning, stacklevel=2)
    return head + 1.0 / (2 - delta) - osc


def gamma_identity_exact_rhs(delta: float) -> float:
    """Closed form of the left side: 2^(delta-2)/(2 - delta).

    Follows from int (1-cos r) r^(-1-a) dr = Gamma(1-a) cos(pi a/2)/a with the
    duplication and reflection formulas; it equals 1/(4(1 - delta/2)) only at delta = 1.
    """
    return 2.0 ** (delta - 2) / (2 - delta)


def gamma_identity_check(delta: float) -> tuple[float, float]:
    """(lhs, rhs) of Gamma((3-d)/2)/(sqrt(pi) Gamma(d/2)) * int (1-cos r) r^(d-3) dr = 1/(4(1 - d/2))."""
    lhs = special.gamma((3 - delta) / 2) / (np.sqrt(np.pi) * special.gamma(delta / 2)) * one_minus_cos_integral(delta)
    rhs = 1.0 / (4 * (1 - delta / 2))
    return float(lhs), float(rhs)
