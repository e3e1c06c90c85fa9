"""Stationary isotropic Gaussian random media with spectrum S(k)/|k|^delta.

Fields are synthesized spectrally on a periodic grid. The fluctuation V is
observed at the scale eps*eta, so the physical power spectrum of
V(x/(eps*eta)) is (eps*eta)^3 * Rhat(eps*eta*k).
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.fft as sfft
from scipy import integrate

MEDIUM_STREAM = 0
NOISE_STREAM = 1
MAX_REJECTIONS = 16


@dataclass(frozen=True)
class Grid3D:
    """Periodic cubic grid of n^3 samples with side `box`, centered at `center`.

    Sample j along an axis sits at center + (j - n/2) * spacing.
    """

    n: int
    box: float
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.n < 2 or self.n % 2:
            raise ValueError(f"grid n must be even and >= 2, got {self.n}")
        if not self.box > 0:
            raise ValueError("grid box must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def spacing(self) -> float:
        return self.box / self.n

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n,) * 3

    @property
    def rshape(self) -> tuple[int, int, int]:
        return (self.n, self.n, self.n // 2 + 1)

    @property
    def k_nyquist(self) -> float:
        return np.pi / self.spacing

    def axis(self, i: int) -> np.ndarray:
        return self.center[i] + (np.arange(self.n) - self.n // 2) * self.spacing

    def coords(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Broadcastable coordinate arrays."""
        x, y, z = (self.axis(i) for i in range(3))
        return x[:, None, None], y[None, :, None], z[None, None, :]

    def kvec(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Broadcastable wavevector components for the rfft layout."""
        dk = 2 * np.pi / self.box
        kx = sfft.fftfreq(self.n, 1.0 / self.n) * dk
        kz = sfft.rfftfreq(self.n, 1.0 / self.n) * dk
        return kx[:, None, None], kx[None, :, None], kz[None, None, :]

    def kmag(self) -> np.ndarray:
        kx, ky, kz = self.kvec()
        return np.sqrt(kx**2 + ky**2 + kz**2)

    def kindex2(self) -> np.ndarray:
        """Integer |m|^2 with k = (2 pi / box) m; used to tabulate radial kernels."""
        m = np.rint(sfft.fftfreq(self.n, 1.0 / self.n)).astype(np.int64)
        mz = np.arange(self.n // 2 + 1, dtype=np.int64)
        return m[:, None, None] ** 2 + m[None, :, None] ** 2 + mz[None, None, :] ** 2

    def center_phase(self) -> np.ndarray | float:
        """Phase e^{i k.c} mapping origin-centered spectra onto this grid."""
        if not any(self.center):
            return 1.0
        kx, ky, kz = self.kvec()
        c = self.center
        return np.exp(1j * (kx * c[0] + ky * c[1] + kz * c[2]))

    def to_spectral(self, f: np.ndarray) -> np.ndarray:
        return sfft.rfftn(sfft.ifftshift(f, axes=(-3, -2, -1)), axes=(-3, -2, -1))

    def to_real(self, F: np.ndarray) -> np.ndarray:
        f = sfft.irfftn(F, s=self.shape, axes=(-3, -2, -1))
        return sfft.fftshift(f, axes=(-3, -2, -1))

    def index_of(self, x: float, i: int) -> float:
        """Fractional index of coordinate x along axis i."""
        return (x - self.center[i]) / self.spacing + self.n // 2


@dataclass(frozen=True)
class MediumSpec:
    sigma0: float = 0.05
    delta: float = 0.0
    eta: float = 1.0
    spectrum: str = "gaussian"
    k_s: float = 2.0
    s0: float | None = None
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.delta < 2.0:
            raise ValueError(f"delta must lie in [0, 2), got {self.delta}")
        if self.sigma0 < 0:
            raise ValueError("sigma0 must be nonnegative")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError(f"eta must lie in (0, 1], got {self.eta}")
        if self.spectrum not in SPECTRA:
            raise ValueError(f"unknown spectrum {self.spectrum!r}; choose from {sorted(SPECTRA)}")

    @property
    def S0(self) -> float:
        if self.s0 is not None:
            return float(self.s0)
        if self.spectrum == "gaussian":
            # R(0) = 1 for delta = 0
            return 8.0 * np.pi**1.5 / self.k_s**3
        return 1.0

    def envelope(self, k) -> np.ndarray:
        """Smooth envelope S(|k|)."""
        return SPECTRA[self.spectrum](np.asarray(k, dtype=float), self)

    def rhat(self, k) -> np.ndarray:
        """Power spectrum Rhat(k) = S(k)/|k|^delta (zero at k = 0 when delta > 0)."""
        k = np.abs(np.asarray(k, dtype=float))
        s = self.envelope(k)
        if self.delta == 0:
            return s
        with np.errstate(divide="ignore"):
            out = s / k**self.delta
        return np.where(k > 0, out, 0.0)

    def hash(self) -> str:
        return spec_hash(self)


def _gaussian_env(k, spec: MediumSpec):
    return spec.S0 * np.exp(-(k**2) / spec.k_s**2)


def _flat_env(k, spec: MediumSpec):
    return np.full_like(k, spec.S0, dtype=float)


SPECTRA = {"gaussian": _gaussian_env, "flat": _flat_env}


def spec_hash(obj) -> str:
    payload = json.dumps(asdict(obj), sort_keys=True, default=str)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def rng_for(seed: int, realization: int, stream: int, attempt: int = 0) -> np.random.Generator:
    """Independent generator for one (seed, realization, stream) triple."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(realization), int(stream), int(attempt)])
    return np.random.default_rng(ss)


def gaussian_synthesis(grid: Grid3D, power: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Real stationary Gaussian field with spectral density `power` (rfft layout).

    The field has covariance (2 pi)^-3 * int power(k) e^{ik.r} dk, discretized
    on the grid. Filtering real white noise keeps Hermitian symmetry exact.
    """
    white = rng.standard_normal(grid.shape)
    amp = np.sqrt(np.maximum(power, 0.0) / grid.spacing**3)
    amp[0, 0, 0] = 0.0
    return sfft.irfftn(sfft.rfftn(white) * amp, s=grid.shape)


@dataclass(frozen=True)
class RandomField:
    grid: Grid3D
    values: np.ndarray = field(repr=False)
    seed: int
    realization: int
    epsilon: float
    spec_hash: str
    attempts: int = 1


def physical_power(spec: MediumSpec, grid: Grid3D, epsilon: float) -> np.ndarray:
    """(eps*eta)^3 Rhat(eps*eta*|k|) on the rfft grid."""
    a = epsilon * spec.eta
    return a**3 * spec.rhat(a * grid.kmag())


def check_resolution(spec: MediumSpec, grid: Grid3D, epsilon: float) -> None:
    corr = epsilon * spec.eta
    if grid.spacing > corr / 2 * (1 + 1e-9):
        raise ValueError(
            f"grid too coarse: spacing {grid.spacing:.4g} exceeds half the correlation length "
            f"eps*eta = {corr:.4g}; need n >= {int(np.ceil(2 * grid.box / corr))}"
        )


def sample_field(spec: MediumSpec, grid: Grid3D, epsilon: float, realization: int = 0) -> RandomField:
    """Draw V(x/(eps*eta)) on the grid, redrawing if 1 + sigma0*V <= 0 anywhere."""
    if spec.delta >= 2:
        raise ValueError("delta must be < 2")
    check_resolution(spec, grid, epsilon)
    power = physical_power(spec, grid, epsilon)
    for attempt in range(MAX_REJECTIONS):
        rng = rng_for(spec.seed, realization, MEDIUM_STREAM, attempt)
        v = gaussian_synthesis(grid, power, rng)
        if spec.sigma0 == 0 or np.min(1.0 + spec.sigma0 * v) > 0:
            return RandomField(grid, v, spec.seed, realization, epsilon, spec.hash(), attempt + 1)
    raise RuntimeError(
        f"no realization with 1 + sigma0*V > 0 after {MAX_REJECTIONS} attempts; sigma0 too large"
    )


@dataclass(frozen=True)
class CorrelationTable:
    r: np.ndarray
    c: np.ndarray
    counts: np.ndarray


def _radial_bins(values: np.ndarray, radius: np.ndarray, n_bins: int, width: float):
    idx = np.rint(radius / width).astype(np.int64).ravel()
    keep = idx < n_bins
    sums = np.bincount(idx[keep], weights=values.ravel()[keep], minlength=n_bins)
    counts = np.bincount(idx[keep], minlength=n_bins)
    with np.errstate(invalid="ignore"):
        mean = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
    return mean, counts


def correlation_estimate(rf: RandomField | np.ndarray, n_lags: int, grid: Grid3D | None = None) -> CorrelationTable:
    """Radially binned circular autocorrelation.

    For a periodic stationary field every lag has n^3 sample pairs, so the
    circular estimator is unbiased. Bin j collects lags with |r| in
    [(j - 1/2) h, (j + 1/2) h), h the grid spacing.
    """
    if isinstance(rf, RandomField):
        grid, v = rf.grid, rf.values
    else:
        v = np.asarray(rf)
        if grid is None:
            raise ValueError("grid required for raw arrays")
    F = sfft.rfftn(v)
    acf = sfft.irfftn(np.abs(F) ** 2, s=grid.shape) / v.size
    m = sfft.fftfreq(grid.n, 1.0 / grid.n)
    r = grid.spacing * np.sqrt(m[:, None, None] ** 2 + m[None, :, None] ** 2 + m[None, None, :] ** 2)
    c, counts = _radial_bins(acf, r, n_lags, grid.spacing)
    return CorrelationTable(np.arange(n_lags) * grid.spacing, c, counts)


def power_spectrum_estimate(v: np.ndarray, grid: Grid3D, n_bins: int):
    """Radially binned periodogram, normalized as a spectral density.

    Returns (k_centers, density, counts); E[density] matches the physical
    power spectrum at the bin centers.
    """
    F = sfft.fftn(v)
    dens = np.abs(F) ** 2 * grid.spacing**6 / grid.box**3
    dk = 2 * np.pi / grid.box
    m = sfft.fftfreq(grid.n, 1.0 / grid.n)
    kr = dk * np.sqrt(m[:, None, None] ** 2 + m[None, :, None] ** 2 + m[None, None, :] ** 2)
    d, counts = _radial_bins(dens, kr, n_bins, dk)
    return np.arange(n_bins) * dk, d, counts


def correlation_exact(spec: MediumSpec, r) -> np.ndarray:
    """R(r) in correlation units by Hankel quadrature of Rhat (delta < 2 any S).

    R(r) = (2 pi^2)^-1 int Rhat(k) k^2 j0(k r) dk.
    """
    r = np.atleast_1d(np.asarray(r, dtype=float))
    out = np.empty_like(r)
    for i, ri in enumerate(r):
        if ri == 0:
            f = lambda k: spec.rhat(k) * k**2
            val, _ = integrate.quad(f, 0, np.inf, limit=400)
        else:
            f = lambda k: spec.rhat(k) * k / ri
            val, _ = integrate.quad(f, 0, 60 * spec.k_s if spec.spectrum == "gaussian" else 1e3,
                                    weight="sin", wvar=ri, limit=400)
        out[i] = val / (2 * np.pi**2)
    return out
