"""Imaging functionals: wave-based back-propagation and correlation-based Wigner back-propagation.

WB: I(z) = F^-1[cos(|k| T) F(1_D p)](z), optionally with the velocity term
that makes the time reversal exact.

CB: with the + mode field w = (qhat.v + p)/sqrt(2) and offsets y' (physical
separation of the two correlated samples),

    I^C(z) = int dq int dy' e^{i q.y'} chi(|y'|/rho) w(x - y'/2) w(x + y'/2),   x = z + qhat,

rho = N_C eps the diameter of the correlation ball. The |q| integral over the
band [q1, q2] is done analytically, K(s) = int q^2 cos(q s) dq, leaving a
direction quadrature of lattice sums. The scaled-variable form of the same
integral (k = eps q, y = y'/eps) is identical, so no eps factors appear.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .propagate import Measurement

SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class Image:
    points: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    kind: str = ""
    meta: dict = field(default_factory=dict)

    def offsets(self) -> np.ndarray:
        """Signed position along the probe line relative to its middle point."""
        mid = self.points[len(self.points) // 2]
        d = self.points - mid
        direction = self.points[-1] - self.points[0]
        nrm = np.linalg.norm(direction)
        return d @ (direction / nrm) if nrm > 0 else np.zeros(len(d))


def probe_line(half_width: float, n: int = 65, center=(0.0, 0.0, 0.0), direction=(0.0, 1.0, 0.0)) -> np.ndarray:
    """n points on a segment through `center`; n odd keeps the center itself."""
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    s = np.linspace(-half_width, half_width, n)
    return np.asarray(center, dtype=float)[None, :] + s[:, None] * d[None, :]


# ---------------------------------------------------------------- WB

def _eval_rfft(F: np.ndarray, grid, points: np.ndarray) -> np.ndarray:
    """Exact trigonometric interpolation of a real field from rfft coefficients at arbitrary points."""
    n = grid.n
    kx, ky, kz = (np.ravel(k) for k in grid.kvec())
    rel = np.asarray(points, dtype=float) - np.asarray(grid.center)[None, :]
    wz = np.full(kz.size, 2.0)
    wz[0] = 1.0
    wz[-1] = 1.0
    out = np.empty(len(rel))
    for i, r in enumerate(rel):
        ez = wz * np.exp(1j * kz * r[2])
        t = F @ ez
        t = t @ np.exp(1j * ky * r[1])
        out[i] = np.real(t @ np.exp(1j * kx * r[0]))
    return out / n**3


def _padded(meas: Measurement, comp: int) -> np.ndarray:
    g = meas.grid
    full = np.zeros(g.shape)
    sl = tuple(slice(s, s + m) for s, m in zip(meas.start, meas.shape))
    full[sl] = meas.u[comp]
    return full


def _wb_spectrum(meas: Measurement, full: bool, T: float) -> np.ndarray:
    g = meas.grid
    kmag = g.kmag()
    spec = np.cos(kmag * T) * g.to_spectral(_padded(meas, 3))
    if full:
        kv = g.kvec()
        with np.errstate(invalid="ignore", divide="ignore"):
            inv = np.where(kmag > 0, 1.0 / kmag, 0.0)
        div = sum(kv[i] * g.to_spectral(_padded(meas, i)) for i in range(3)) * inv
        spec = spec + 1j * np.sin(kmag * T) * div
    return spec


def wb_backpropagate(meas: Measurement, full: bool = False, T: float | None = None) -> np.ndarray:
    """WB image on the whole embedding grid."""
    return meas.grid.to_real(_wb_spectrum(meas, full, meas.t if T is None else T))


def wb_image(meas: Measurement, probe: np.ndarray, full: bool = False, T: float | None = None) -> Image:
    """Back-propagated pressure cos(|k|T) F(1_D p); `full` adds i sin(|k|T) khat.F(1_D v)."""
    T = meas.t if T is None else T
    vals = _eval_rfft(_wb_spectrum(meas, full, T), meas.grid, probe)
    return Image(np.asarray(probe, dtype=float), vals, "WB", {"full": full, "T": T})


# ---------------------------------------------------------------- CB

@dataclass(frozen=True)
class CBConfig:
    """Correlation ball of diameter rho = N_C eps with N_C = r0 eps^-gamma.

    band_width is the half-width of the radial band in units of 1/(eps mu).
    aperture, if set, fixes the direction cap half-angle (radians) so the
    direction set does not change across a sweep. whole_box treats the
    measurement as periodic data on its entire grid.
    """

    r0: float = 0.25
    gamma_exp: float = 0.5
    epsilon: float = 1.0 / 16
    k0: float = 1.0
    mu: float = 2.0
    band_width: float = 4.0
    rolloff: float = 0.1
    n_theta: int = 16
    n_phi: int = 32
    aperture: float | None = None
    whole_box: bool = False

    def __post_init__(self):
        if self.r0 <= 0:
            raise ValueError("r0 must be positive")
        if not 0 <= self.gamma_exp <= 1:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma_exp}")
        if self.n_c < 1 - 1e-12:
            raise ValueError(f"N_C = r0 eps^-gamma = {self.n_c:.3g} < 1: subwavelength correlation ball not allowed")
        if not 0 <= self.rolloff < 1:
            raise ValueError("rolloff must lie in [0, 1)")
        if self.n_theta < 1 or self.n_phi < 1:
            raise ValueError("direction grid must be nonempty")

    @property
    def n_c(self) -> float:
        return self.r0 * self.epsilon ** (-self.gamma_exp)

    @property
    def rho(self) -> float:
        return self.n_c * self.epsilon

    @property
    def band(self) -> tuple[float, float]:
        c, w = self.k0 / self.epsilon, self.band_width / (self.epsilon * self.mu)
        return max(0.0, c - w), c + w

    def check_detector(self, side: float | None) -> None:
        if side is not None and self.r0 >= side:
            raise ValueError(f"r0 = {self.r0} must be smaller than the detector side {side}")


def window(s, rolloff: float = 0.1) -> np.ndarray:
    """Smoothed indicator of [0, 1]: 1 up to 1 - rolloff, raised-cosine taper to 0 at 1."""
    s = np.abs(np.asarray(s, dtype=float))
    if rolloff == 0:
        return (s <= 1).astype(float)
    a = 1.0 - rolloff
    t = np.clip((s - a) / rolloff, 0.0, 1.0)
    return np.where(s <= a, 1.0, np.where(s < 1, 0.5 * (1 + np.cos(np.pi * t)), 0.0))


def band_kernel(s, q1: float, q2: float) -> np.ndarray:
    """K(s) = int_{q1}^{q2} q^2 cos(q s) dq (Taylor series near s = 0)."""
    s = np.asarray(s, dtype=float)

    def prim(q, s):
        with np.errstate(invalid="ignore", divide="ignore"):
            return q**2 * np.sin(q * s) / s + 2 * q * np.cos(q * s) / s**2 - 2 * np.sin(q * s) / s**3

    def series(q, s):
        x = (q * s) ** 2
        return q**3 * (1 / 3 - x / 10 + x**2 / 168 - x**3 / 6480 + x**4 / 443520)

    small = np.abs(s) * q2 < 0.2
    ss = np.where(small, 1.0, s)
    big = prim(q2, ss) - prim(q1, ss)
    return np.where(small, series(q2, s) - series(q1, s), big)


def _sphere_cap(axis: np.ndarray, cos_min: float, n_theta: int, n_phi: int) -> tuple[np.ndarray, np.ndarray]:
    """Product Gauss (in cos theta) x trapezoid (in phi) nodes on the cap cos(theta) >= cos_min."""
    x, w = np.polynomial.legendre.leggauss(n_theta)
    c = 0.5 * (1 - cos_min) * (x + 1) + cos_min
    wc = 0.5 * (1 - cos_min) * w
    phi = 2 * np.pi * (np.arange(n_phi) + 0.5) / n_phi
    st = np.sqrt(np.maximum(1 - c**2, 0.0))
    a = axis / np.linalg.norm(axis)
    helper = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(a, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(a, e1)
    dirs = (c[:, None, None] * a + st[:, None, None] * (np.cos(phi)[None, :, None] * e1 + np.sin(phi)[None, :, None] * e2))
    weights = np.repeat(wc[:, None] * (2 * np.pi / n_phi), n_phi, axis=1)
    return dirs.reshape(-1, 3), weights.ravel()


def _cap_angle(z: np.ndarray, center: np.ndarray, side: float) -> tuple[np.ndarray, float]:
    axis = center - z
    corners = center + 0.5 * side * np.array([[i, j, k] for i in (-1, 1) for j in (-1, 1) for k in (-1, 1)])
    d = corners - z
    cosang = d @ axis / (np.linalg.norm(d, axis=1) * np.linalg.norm(axis))
    return axis, float(np.min(cosang))


@lru_cache(maxsize=32)
def _offset_classes(h: float, rho: float, rolloff: float):
    """Per parity class c in {0,1}^3: integer e with d = 2e + c, |d| h <= rho, plus chi weights.

    A sample pair (a, b) centered at half-grid point X2/2 has b - a = d with
    d = X2 (mod 2), so each center uses exactly one class.
    """
    r = int(np.floor(rho / h)) + 1
    out = {}
    for c in np.ndindex(2, 2, 2):
        c = np.array(c)
        e1 = np.arange(-(r // 2) - 1, r // 2 + 2)
        E = np.stack(np.meshgrid(e1, e1, e1, indexing="ij"), axis=-1).reshape(-1, 3)
        d = 2 * E + c
        y = d * h
        s = np.linalg.norm(y, axis=1) / rho
        chi = window(s, rolloff)
        keep = chi > 0
        out[tuple(c)] = (E[keep], y[keep], chi[keep])
    return out


def _mode_gather(U: np.ndarray, idx: np.ndarray, qhat: np.ndarray, mode: int) -> np.ndarray:
    return (qhat[0] * U[0, idx] + qhat[1] * U[1, idx] + qhat[2] * U[2, idx] + mode * U[3, idx]) / SQRT2


class _BlockPairs:
    """Gathers centered sample pairs from a detector block for ball sums."""

    def __init__(self, meas: Measurement, cfg: CBConfig):
        self.meas = meas
        self.h = meas.spacing
        self.shape = np.array(meas.shape)
        self.U = meas.u.reshape(4, -1)
        self.strides = np.array([meas.shape[1] * meas.shape[2], meas.shape[2], 1])
        self.origin = meas.origin
        self.classes = _offset_classes(self.h, cfg.rho, cfg.rolloff)
        self.flat = {c: E @ self.strides for c, (E, _, _) in self.classes.items()}
        self.extent = {c: np.abs(E).max(axis=0) if len(E) else np.zeros(3, int) for c, (E, _, _) in self.classes.items()}

    def pairs(self, x: np.ndarray):
        """Indices (ia, ib), offsets y' and weights chi for the pair set centered near x, or None."""
        X2 = np.rint(2 * (x - self.origin) / self.h).astype(int)
        c = tuple(X2 % 2)
        E, y, chi = self.classes[c]
        lo = (X2 - np.array(c)) // 2
        hi = (X2 + np.array(c)) // 2
        ext = self.extent[c]
        if np.any(lo - ext < 0) or np.any(hi + ext > self.shape - 1):
            return None
        off = self.flat[c]
        return lo @ self.strides - off, hi @ self.strides + off, y, chi


def wigner_mode_amplitude(meas: Measurement, x, q, cfg: CBConfig, mode: int = 1) -> complex:
    """Windowed Wigner amplitude of the +/- mode at position x and physical wavevector q.

    Normalized as (2 pi)^-3 int dy e^{i k.y} chi w(x - eps y/2) w(x + eps y/2)
    with k = eps q; returned complex so the (vanishing) imaginary part can be checked.
    """
    x = np.asarray(x, dtype=float)
    q = np.asarray(q, dtype=float)
    qn = np.linalg.norm(q)
    if qn == 0:
        raise ValueError("q must be nonzero")
    qhat = q / qn
    bp = _BlockPairs(meas, cfg)
    got = bp.pairs(x)
    if got is None:
        raise ValueError("correlation ball around x leaves the detector")
    ia, ib, y, chi = got
    wa = _mode_gather(bp.U, ia, qhat, mode)
    wb = _mode_gather(bp.U, ib, qhat, mode)
    val = np.sum(np.exp(1j * (y @ q)) * chi * wa * wb) * (2 * bp.h) ** 3
    return complex(val / ((2 * np.pi) ** 3 * cfg.epsilon**3))


def _ball_inside(x: np.ndarray, center: np.ndarray, side: float, radius: float) -> bool:
    return bool(np.all(np.abs(x - center) + radius <= side / 2 + 1e-12))


def cb_image(meas: Measurement, probe: np.ndarray, cfg: CBConfig, T: float | None = None) -> Image:
    """Correlation-based image at each probe point (see module docstring).

    Correlations are taken at x = z + T qhat; T defaults to the measurement time.
    """
    T = meas.t if T is None else float(T)
    if cfg.whole_box:
        return _cb_whole_box(meas, probe, cfg, T)
    det = meas.detector
    if det.side is None:
        raise ValueError("detector side required; use whole_box for the periodic whole-grid functional")
    cfg.check_detector(det.side)
    q1, q2 = cfg.band
    bp = _BlockPairs(meas, cfg)
    center = np.asarray(det.center)
    radius = cfg.rho / 2
    probe = np.atleast_2d(np.asarray(probe, dtype=float))
    vals = np.zeros(len(probe))
    used = np.zeros(len(probe), dtype=int)
    cell = (2 * bp.h) ** 3
    for i, z in enumerate(probe):
        axis, cos_min = _cap_angle(z, center, det.side)
        if cfg.aperture is not None:
            cos_min = np.cos(cfg.aperture)
        dirs, wts = _sphere_cap(axis, cos_min, cfg.n_theta, cfg.n_phi)
        total = 0.0
        for qhat, wq in zip(dirs, wts):
            x = z + T * qhat
            if not _ball_inside(x, center, det.side, radius):
                continue
            got = bp.pairs(x)
            if got is None:
                continue
            ia, ib, y, chi = got
            wa = _mode_gather(bp.U, ia, qhat, 1)
            wb = _mode_gather(bp.U, ib, qhat, 1)
            total += wq * cell * np.sum(band_kernel(y @ qhat, q1, q2) * chi * wa * wb)
            used[i] += 1
        if used[i] == 0:
            warnings.warn(f"no admissible direction for probe {z}; value set to 0", RuntimeWarning, stacklevel=2)
        vals[i] = total
    return Image(probe, vals, "CB", {"n_c": cfg.n_c, "rho": cfg.rho, "directions_used": used.tolist()})


def _cb_whole_box(meas: Measurement, probe: np.ndarray, cfg: CBConfig, T: float) -> Image:
    """Periodic whole-grid functional; each direction's field is shifted spectrally so x is a grid point."""
    g = meas.grid
    if meas.shape != g.shape:
        raise ValueError("whole_box requires a measurement covering the entire grid")
    q1, q2 = cfg.band
    h = g.spacing
    spectra = g.to_spectral(meas.u)
    kv = g.kvec()
    n = g.n
    e = np.arange(-(n // 4), n // 4)
    E = np.stack(np.meshgrid(e, e, e, indexing="ij"), axis=-1).reshape(-1, 3)
    y = 2 * E * h
    chi = window(np.linalg.norm(y, axis=1) / cfg.rho, cfg.rolloff)
    keep = chi > 0
    E, y, chi = E[keep], y[keep], chi[keep]
    cell = (2 * h) ** 3
    probe = np.atleast_2d(np.asarray(probe, dtype=float))
    dirs, wts = _sphere_cap(np.array([1.0, 0.0, 0.0]), -1.0, cfg.n_theta, cfg.n_phi)
    K = [band_kernel(y @ qh, q1, q2) * chi for qh in dirs]
    vals = np.zeros(len(probe))
    for i, z in enumerate(probe):
        total = 0.0
        for qhat, wq, Kq in zip(dirs, wts, K):
            x = z + T * qhat
            idx = np.rint([g.index_of(x[j], j) for j in range(3)]).astype(int)
            delta = x - np.array([g.axis(j)[idx[j] % n] for j in range(3)])
            delta -= np.rint(delta / g.box) * g.box
            phase = np.exp(1j * (kv[0] * delta[0] + kv[1] * delta[1] + kv[2] * delta[2]))
            wspec = (qhat[0] * spectra[0] + qhat[1] * spectra[1] + qhat[2] * spectra[2] + spectra[3]) * phase / SQRT2
            w = g.to_real(wspec)
            a = w[tuple(((idx[None, :] - E) % n).T)]
            b = w[tuple(((idx[None, :] + E) % n).T)]
            total += wq * cell * np.sum(Kq * a * b)
        vals[i] = total
    return Image(probe, vals, "CB", {"n_c": cfg.n_c, "rho": cfg.rho, "whole_box": True})


def fwhm(offsets: np.ndarray, values: np.ndarray) -> float:
    """Full width at half maximum of the central lobe, by linear interpolation of the crossings."""
    s = np.asarray(offsets, dtype=float)
    v = np.asarray(values, dtype=float)
    i0 = int(np.argmax(v))
    half = 0.5 * v[i0]
    right = next((j for j in range(i0, len(v)) if v[j] < half), None)
    left = next((j for j in range(i0, -1, -1) if v[j] < half), None)
    if right is None or left is None:
        return float("inf")
    xr = s[right - 1] + (half - v[right - 1]) * (s[right] - s[right - 1]) / (v[right] - v[right - 1])
    xl = s[left + 1] + (half - v[left + 1]) * (s[left] - s[left + 1]) / (v[left] - v[left + 1])
    return float(xr - xl)
