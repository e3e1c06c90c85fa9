"""Wavefields at the detector: damped ballistic mean, Born fluctuation, detector noise.

Acoustic system with unit background: dv/dt = -grad p, dp/dt = -div v, so
p solves the wave equation and the initial velocity is zero.

All spectral arrays use the rfft layout of `Grid3D` and the grid convention
coefficients = (continuous transform) / h^3 * e^{i k.c}.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy import interpolate, special

from .randmedium import NOISE_STREAM, Grid3D, MediumSpec, RandomField, gaussian_synthesis, rng_for
from .source import SourceSpec, source_fourier

COMPONENT_NAMES = ("mean", "born", "noise")


@dataclass(frozen=True)
class SpectralField:
    """Pressure spectrum `p` and optional velocity spectrum `v` (shape (3, ...))."""

    grid: Grid3D
    p: np.ndarray = field(repr=False)
    v: np.ndarray | None = field(default=None, repr=False)

    def real(self) -> tuple[np.ndarray, np.ndarray | None]:
        p = self.grid.to_real(self.p)
        v = None if self.v is None else self.grid.to_real(self.v)
        return p, v

    def scaled(self, a: float) -> SpectralField:
        return SpectralField(self.grid, a * self.p, None if self.v is None else a * self.v)

    def __add__(self, other: SpectralField) -> SpectralField:
        if other.grid != self.grid:
            raise ValueError("fields live on different grids")
        v = None if self.v is None or other.v is None else self.v + other.v
        return SpectralField(self.grid, self.p + other.p, v)

    def energy(self) -> float:
        """Parseval-weighted spectral L2 norm squared of (p, v)."""
        w = np.full(self.grid.rshape[-1], 2.0)
        w[0] = 1.0
        if self.grid.n % 2 == 0:
            w[-1] = 1.0
        e = np.sum(w * np.abs(self.p) ** 2)
        if self.v is not None:
            e += np.sum(w * np.abs(self.v) ** 2)
        return float(e)


def zero_field(grid: Grid3D, velocity: bool = True) -> SpectralField:
    z = np.zeros(grid.rshape, dtype=complex)
    return SpectralField(grid, z, np.zeros((3,) + grid.rshape, dtype=complex) if velocity else None)


def _khat(grid: Grid3D) -> np.ndarray:
    k = np.broadcast_arrays(*grid.kvec())
    kmag = grid.kmag()
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.stack([np.where(kmag > 0, ki / kmag, 0.0) for ki in k])
    return out


def source_spectrum(source: SourceSpec, grid: Grid3D) -> np.ndarray:
    """Grid coefficients of p0 (source at the origin)."""
    return source_fourier(source, grid.kmag()) / grid.spacing**3 * grid.center_phase()


def propagate_spectrum(p0_hat: np.ndarray, grid: Grid3D, t: float, velocity: bool = True) -> SpectralField:
    """Free propagation from (p0, v = 0): p = cos(|k| t) p0, v = -i khat sin(|k| t) p0."""
    kmag = grid.kmag()
    p = np.cos(kmag * t) * p0_hat
    v = None
    if velocity:
        v = -1j * _khat(grid) * (np.sin(kmag * t) * p0_hat)
    return SpectralField(grid, p, v)


def ballistic(source: SourceSpec, t: float, grid: Grid3D, velocity: bool = True) -> SpectralField:
    if t < 0:
        raise ValueError("t must be nonnegative")
    return propagate_spectrum(source_spectrum(source, grid), grid, t, velocity)


def mean_field(source: SourceSpec, t: float, grid: Grid3D, Sigma: float, velocity: bool = True) -> SpectralField:
    """Ballistic field damped by exp(-Sigma t / 2)."""
    if Sigma < 0:
        raise ValueError("Sigma must be nonnegative")
    return ballistic(source, t, grid, velocity).scaled(np.exp(-Sigma * t / 2))


# ---------------------------------------------------------------- Born field
#
# delta p = -sigma0 box^{-1}[V lap p_B] with zero initial data, i.e.
#   delta p^(t,k) = -sigma0 int_0^t sin(|k|(t-s))/|k| F[V lap p_B(s)](k) ds.
# cos(|q| s) is interpolated in s on Chebyshev nodes s_j (error below `tol`
# over the source band), which makes V lap p_B(s) = sum_j l_j(s) V h_j with
# h_j = F^-1[-|q|^2 cos(|q| s_j) p0^]. The s-integral against each Lagrange
# basis polynomial is then a radial kernel in |k|, tabulated exactly on the
# distinct lattice radii.


def chebyshev_nodes(N: int, t: float) -> np.ndarray:
    j = np.arange(N)
    return 0.5 * t * (1.0 - np.cos(np.pi * (j + 0.5) / N))


def lagrange_matrix(nodes: np.ndarray, s: np.ndarray) -> np.ndarray:
    """L[i, j] = l_j(s_i) for first-kind Chebyshev nodes (barycentric form)."""
    N = len(nodes)
    j = np.arange(N)
    w = (-1.0) ** j * np.sin(np.pi * (j + 0.5) / N)
    # nodes were built from cos(pi (j + 1/2)/N) with a sign flip, which only flips all weights
    d = s[:, None] - nodes[None, :]
    exact = np.isclose(d, 0.0, atol=1e-15)
    d = np.where(exact, 1.0, d)
    terms = w[None, :] / d
    L = terms / terms.sum(axis=1, keepdims=True)
    rows = exact.any(axis=1)
    if rows.any():
        L[rows] = exact[rows].astype(float)
    return L


def time_nodes_for(band: float, t: float, tol: float = 1e-10, n_max: int = 512) -> np.ndarray:
    """Fewest Chebyshev nodes interpolating cos(b s) on [0, t] to `tol` for all b <= band."""
    s = np.linspace(0.0, t, 2001)
    bs = np.linspace(0.0, band, 41)
    N = 8
    while N <= n_max:
        nodes = chebyshev_nodes(N, t)
        L = lagrange_matrix(nodes, s)
        err = np.max(np.abs(np.cos(np.outer(s, bs)) - L @ np.cos(np.outer(nodes, bs))))
        if err < tol:
            return nodes
        N += 4
    raise RuntimeError(f"time interpolation did not reach tol {tol} with {n_max} nodes")


def time_kernels(a: np.ndarray, nodes: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
    """M[i, j] = int_0^t sin(a_i (t-s))/a_i l_j(s) ds and U[i, j] = int_0^t (1 - cos(a_i (t-s)))/a_i^2 l_j(s) ds."""
    a = np.asarray(a, dtype=float)
    G = int(0.75 * (a.max(initial=0.0) * t) + len(nodes)) + 48
    x, w = np.polynomial.legendre.leggauss(G)
    s = 0.5 * t * (x + 1.0)
    w = 0.5 * t * w
    L = lagrange_matrix(nodes, s) * w[:, None]
    tau = t - s
    at = np.outer(a, tau)
    safe = np.where(a > 0, a, 1.0)[:, None]
    msin = np.where(a[:, None] > 0, np.sin(at) / safe, tau[None, :])
    ucos = np.where(a[:, None] > 0, 2.0 * np.sin(at / 2) ** 2 / safe**2, 0.5 * tau[None, :] ** 2)
    return msin @ L, ucos @ L


@lru_cache(maxsize=8)
def _radial_index(grid: Grid3D) -> tuple[np.ndarray, np.ndarray]:
    m2 = grid.kindex2()
    uniq, inv = np.unique(m2, return_inverse=True)
    return (2 * np.pi / grid.box) * np.sqrt(uniq.astype(float)), inv.reshape(m2.shape)


def born_response(p0_hat: np.ndarray, V: np.ndarray, grid: Grid3D, t: float,
                  band: float | None = None, velocity: bool = True, tol: float = 1e-10) -> SpectralField:
    """Unit-amplitude, undamped Born field -box^{-1}[V lap p_B](t) for the source spectrum p0_hat.

    `band` bounds |q| on the support of p0_hat (defaults to the grid's largest |k|).
    The result scales linearly with V; multiply by sigma0 exp(-Sigma t/2).
    """
    kmag = grid.kmag()
    if band is None:
        band = float(kmag.max())
    nodes = time_nodes_for(band, t, tol)
    radii, inv = _radial_index(grid)
    M, U = time_kernels(radii, nodes, t)
    lap_p0 = -(kmag**2) * p0_hat
    acc_p = np.zeros(grid.rshape, dtype=complex)
    acc_u = np.zeros(grid.rshape, dtype=complex) if velocity else None
    for j, sj in enumerate(nodes):
        h = grid.to_real(np.cos(kmag * sj) * lap_p0)
        F = grid.to_spectral(V * h)
        acc_p += M[inv, j] * F
        if velocity:
            acc_u += U[inv, j] * F
    p = -acc_p
    v = None
    if velocity:
        kv = np.stack(np.broadcast_arrays(*grid.kvec()))
        v = 1j * kv * acc_u
    return SpectralField(grid, p, v)


def born_field(source: SourceSpec, medium: RandomField, spec: MediumSpec, t: float, grid: Grid3D,
               Sigma: float, velocity: bool = True, tol: float = 1e-10) -> SpectralField:
    """Single-scattering fluctuation sigma0 exp(-Sigma t/2) * born_response."""
    if medium.grid != grid:
        raise ValueError("medium must be sampled on the propagation grid")
    if spec.sigma0 == 0:
        return zero_field(grid, velocity)
    unit = born_response(source_spectrum(source, grid), medium.values, grid, t,
                         band=min(source.k_max, float(grid.kmag().max())), velocity=velocity, tol=tol)
    return unit.scaled(spec.sigma0 * np.exp(-Sigma * t / 2))


# ---------------------------------------------------------------- detector noise

def _gaussian_phi_hat(k):
    return (2 * np.pi) ** 1.5 * np.exp(-0.5 * np.square(k))


# name -> (Phi(r), continuous 3D Fourier transform of Phi)
PHI = {"gaussian": (lambda r: np.exp(-0.5 * np.square(r)), _gaussian_phi_hat)}


@dataclass(frozen=True)
class NoiseSpec:
    sigma_n: float = 0.0
    phi: str = "gaussian"
    seed: int = 0

    def __post_init__(self):
        if self.sigma_n < 0:
            raise ValueError("sigma_n must be nonnegative")
        if self.phi not in PHI:
            raise ValueError(f"unknown noise correlation {self.phi!r}; choose from {sorted(PHI)}")

    def correlation(self, r) -> np.ndarray:
        return PHI[self.phi][0](np.asarray(r, dtype=float))


def noise_power(spec: NoiseSpec, epsilon: float, grid: Grid3D) -> np.ndarray:
    """eps^3 Phi^(eps |k|): spectrum of a unit-variance field with correlation Phi(r/eps)."""
    return epsilon**3 * PHI[spec.phi][1](epsilon * grid.kmag())


def detector_noise(spec: NoiseSpec, epsilon: float, grid: Grid3D, realization: int = 0,
                   velocity: bool = True) -> SpectralField:
    """sigma_n * (n_p, n_v): four independent stationary fields with correlation Phi(./eps)."""
    if grid.spacing > epsilon / 2 * (1 + 1e-9):
        raise ValueError(f"grid spacing {grid.spacing:.4g} too coarse for noise scale eps = {epsilon:.4g}")
    if spec.sigma_n == 0:
        return zero_field(grid, velocity)
    rng = rng_for(spec.seed, realization, NOISE_STREAM)
    power = noise_power(spec, epsilon, grid)
    n_comp = 4 if velocity else 1
    fields = [gaussian_synthesis(grid, power, rng) for _ in range(n_comp)]
    spectra = [spec.sigma_n * grid.to_spectral(f) for f in fields]
    v = np.stack(spectra[1:]) if velocity else None
    return SpectralField(grid, spectra[0], v)


# ---------------------------------------------------------------- detector and measurement

@dataclass(frozen=True)
class Detector:
    """Cube of side `side` centered at `center`; side None means the whole grid."""

    center: tuple[float, float, float] = (1.0, 0.0, 0.0)
    side: float | None = 0.5

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if self.side is not None and not 0 < self.side < 1:
            raise ValueError(f"detector side must lie in (0, 1), got {self.side}")

    def block(self, grid: Grid3D) -> tuple[slice, slice, slice]:
        """Index ranges of the grid samples inside the cube."""
        if self.side is None:
            return (slice(0, grid.n),) * 3
        out = []
        half = self.side / 2 + 1e-9 * grid.spacing
        for i in range(3):
            ax = grid.axis(i)
            lo, hi = self.center[i] - half, self.center[i] + half
            if lo < ax[0] or hi > ax[-1]:
                raise ValueError(f"detector extends outside the grid box along axis {i}")
            idx = np.nonzero((ax >= lo) & (ax <= hi))[0]
            if idx.size == 0:
                raise ValueError("detector contains no grid samples")
            out.append(slice(int(idx[0]), int(idx[-1]) + 1))
        return tuple(out)

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.side is None:
            return np.ones(x.shape[:-1], dtype=bool)
        return np.all(np.abs(x - np.asarray(self.center)) <= self.side / 2, axis=-1)


def detector_grid(grid: Grid3D, detector: Detector, margin: float) -> Grid3D:
    """Smaller periodic grid with the same spacing whose samples coincide with `grid`
    over the detector block plus `margin` on every side (for local noise synthesis)."""
    sl = detector.block(grid)
    h = grid.spacing
    mc = int(np.ceil(margin / h))
    m = max(s.stop - s.start for s in sl)
    n = m + 2 * mc
    n += n % 2
    center = tuple(float(grid.axis(i)[sl[i].start]) + (n // 2 - mc) * h for i in range(3))
    return Grid3D(n, n * h, center)


@dataclass(frozen=True)
class Measurement:
    """Detector samples at time t, kept per component as (4, m0, m1, m2) arrays ordered (v1, v2, v3, p).

    `grid` is the embedding grid used for back-propagation; `start` is the
    index of the block's first sample in it.
    """

    grid: Grid3D
    detector: Detector
    start: tuple[int, int, int]
    components: dict = field(repr=False)
    t: float = 1.0

    @property
    def shape(self) -> tuple[int, int, int]:
        return next(iter(self.components.values())).shape[1:]

    @property
    def spacing(self) -> float:
        return self.grid.spacing

    def axis(self, i: int) -> np.ndarray:
        return self.grid.axis(i)[self.start[i]: self.start[i] + self.shape[i]]

    @property
    def origin(self) -> np.ndarray:
        return np.array([self.axis(i)[0] for i in range(3)])

    @property
    def u(self) -> np.ndarray:
        return sum(self.components.values())

    @property
    def p(self) -> np.ndarray:
        return self.u[3]

    @property
    def v(self) -> np.ndarray:
        return self.u[:3]

    def select(self, *names: str) -> Measurement:
        missing = [n for n in names if n not in self.components]
        if missing:
            raise KeyError(f"components not present: {missing}")
        return replace(self, components={n: self.components[n] for n in names})

    def scaled(self, a: float) -> Measurement:
        return replace(self, components={n: a * c for n, c in self.components.items()})

    def with_component(self, name: str, data: np.ndarray) -> Measurement:
        if data.shape != (4,) + self.shape:
            raise ValueError("component shape mismatch")
        comps = dict(self.components)
        comps[name] = data
        return replace(self, components=comps)


def restrict(f: SpectralField, grid: Grid3D, detector: Detector) -> np.ndarray:
    """Samples of f on the detector block of `grid`, as (4, m0, m1, m2).

    f may live on `grid` or on any grid of equal spacing whose samples coincide
    with the block (see `detector_grid`).
    """
    sl = detector.block(grid)
    if abs(f.grid.spacing - grid.spacing) > 1e-12 * grid.spacing:
        raise ValueError("field grid spacing differs from the measurement grid")
    idx = []
    for i in range(3):
        x0 = grid.axis(i)[sl[i].start]
        j = f.grid.index_of(x0, i)
        if abs(j - round(j)) > 1e-6:
            raise ValueError("field grid is not aligned with the measurement grid")
        j = int(round(j))
        m = sl[i].stop - sl[i].start
        if j < 0 or j + m > f.grid.n:
            raise ValueError("detector outside the field grid box")
        idx.append(slice(j, j + m))
    p, v = f.real()
    out = np.zeros((4,) + tuple(s.stop - s.start for s in idx))
    out[3] = p[tuple(idx)]
    if v is not None:
        out[:3] = v[(slice(None),) + tuple(idx)]
    return out


def assemble_measurement(mean: SpectralField | None, born: SpectralField | None, noise: SpectralField | None,
                         detector: Detector, grid: Grid3D | None = None, t: float = 1.0) -> Measurement:
    """Restrict each component to the detector and store them separately (None -> zeros)."""
    fields = {"mean": mean, "born": born, "noise": noise}
    if grid is None:
        grid = next((f.grid for f in fields.values() if f is not None), None)
        if grid is None:
            raise ValueError("a grid is required when every component is None")
    sl = detector.block(grid)
    shape = (4,) + tuple(s.stop - s.start for s in sl)
    comps = {name: (np.zeros(shape) if f is None else restrict(f, grid, detector)) for name, f in fields.items()}
    return Measurement(grid, detector, tuple(s.start for s in sl), comps, t)


# ---------------------------------------------------------------- analytic radial fields

def radial_ballistic(source: SourceSpec, t: float, r, n_nodes: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Free field at radius r: p = 4 pi int P k^2 j0(kr) cos(kt) dk, v_r = 4 pi int P k^2 j1(kr) sin(kt) dk.

    Gauss-Legendre over the truncated shell; the default node count resolves
    the oscillation in k for the largest requested radius.
    """
    r = np.asarray(r, dtype=float)
    a, b = source.k_min, source.k_max
    if n_nodes is None:
        n_nodes = int(0.6 * (b - a) * (t + float(np.max(r, initial=0.0)))) + 96
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    k = 0.5 * (b - a) * (x + 1) + a
    w = 0.5 * (b - a) * w * 4 * np.pi * source_fourier(source, k) / (2 * np.pi) ** 3 * k**2
    flat = r.ravel()
    p = np.empty_like(flat)
    vr = np.empty_like(flat)
    chunk = max(1, 4_000_000 // n_nodes)
    for i in range(0, flat.size, chunk):
        kr = np.outer(flat[i:i + chunk], k)
        p[i:i + chunk] = (special.spherical_jn(0, kr) * np.cos(k * t)) @ w
        vr[i:i + chunk] = (special.spherical_jn(1, kr) * np.sin(k * t)) @ w
    return p.reshape(r.shape), vr.reshape(r.shape)


@dataclass(frozen=True)
class RadialTable:
    """Quintic-spline tables of the free field p(r) and v_r(r) on [r_min, r_max]."""

    p_spline: object
    v_spline: object
    r_min: float
    r_max: float

    def __call__(self, r) -> tuple[np.ndarray, np.ndarray]:
        r = np.asarray(r, dtype=float)
        if np.any(r < self.r_min - 1e-12) or np.any(r > self.r_max + 1e-12):
            raise ValueError("radius outside table range")
        return self.p_spline(r), self.v_spline(r)


def radial_table(source: SourceSpec, t: float, r_min: float, r_max: float, points_per_wavelength: int = 32) -> RadialTable:
    dr = 2 * np.pi / (points_per_wavelength * source.k_max)
    n = int(np.ceil((r_max - r_min) / dr)) + 6
    r = np.linspace(r_min, r_max, n)
    p, vr = radial_ballistic(source, t, r)
    return RadialTable(interpolate.make_interp_spline(r, p, k=5), interpolate.make_interp_spline(r, vr, k=5),
                       r_min, r_max)


def analytic_measurement(source: SourceSpec, t: float, Sigma: float, detector: Detector, grid: Grid3D) -> Measurement:
    """Mean-only measurement evaluated from the radial solution on the detector block.

    Equivalent to restricting `mean_field` without forming the global spectrum;
    useful when the band needs a grid too large for 3D FFTs.
    """
    sl = detector.block(grid)
    axes = [grid.axis(i)[sl[i]] for i in range(3)]
    X = np.stack(np.meshgrid(*axes, indexing="ij"))
    r = np.sqrt(np.sum(X**2, axis=0))
    table = radial_table(source, t, max(float(r.min()) - 1e-9, 0.0), float(r.max()) + 1e-9)
    p, vr = table(r)
    damp = np.exp(-Sigma * t / 2)
    out = np.empty((4,) + r.shape)
    with np.errstate(invalid="ignore", divide="ignore"):
        for i in range(3):
            out[i] = damp * vr * np.where(r > 0, X[i] / r, 0.0)
    out[3] = damp * p
    zeros = np.zeros_like(out)
    return Measurement(grid, detector, tuple(s.start for s in sl), {"mean": out, "born": zeros, "noise": zeros.copy()}, t)
