"""Monte Carlo ensembles of images, their statistics, exponent fits and the scaling oracle."""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
import scipy.fft as sfft

from .attenuation import sigma_quadrature
from .config import COMPONENTS, EnsembleConfig, ExperimentConfig, apply_sweep
from .imaging import cb_image, probe_line, wb_image
from .propagate import (Measurement, analytic_measurement, assemble_measurement, born_response, detector_grid,
                        detector_noise, mean_field, restrict, source_spectrum)
from .randmedium import sample_field

# ---------------------------------------------------------------- statistics


def jackknife_variance(x: np.ndarray, axis: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Unbiased sample variance along `axis` and its leave-one-out jackknife standard error."""
    x = np.moveaxis(np.asarray(x, dtype=float), axis, 0)
    n = x.shape[0]
    if n < 3:
        raise ValueError("need at least 3 samples for a jackknife error")
    var = x.var(axis=0, ddof=1)
    s1 = x.sum(axis=0)
    s2 = (x**2).sum(axis=0)
    # leave-one-out variances from running sums
    loo_mean = (s1[None] - x) / (n - 1)
    loo_var = ((s2[None] - x**2) - (n - 1) * loo_mean**2) / (n - 2)
    err = np.sqrt((n - 1) / n * np.sum((loo_var - loo_var.mean(axis=0)) ** 2, axis=0))
    return var, err


@dataclass(frozen=True)
class PointStats:
    mean: np.ndarray
    var: np.ndarray
    var_err: np.ndarray
    mean_err: np.ndarray

    @property
    def snr(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.var > 0, np.abs(self.mean) / np.sqrt(np.maximum(self.var, 0)), np.inf)


def point_stats(samples: np.ndarray) -> PointStats:
    """Per-point statistics of an (n_realizations, n_points) array."""
    samples = np.asarray(samples, dtype=float)
    var, err = jackknife_variance(samples, 0)
    var = np.maximum(var, 0.0)
    return PointStats(samples.mean(axis=0), var, err, np.sqrt(var / samples.shape[0]))


@dataclass(frozen=True)
class FitResult:
    slope: float
    stderr: float
    intercept: float
    n_used: int


def fit_exponent(x, y, yerr=None) -> FitResult:
    """Least-squares slope of log y against log x (weighted when yerr is given)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = (x > 0) & (y > 0) & np.isfinite(x) & np.isfinite(y)
    if not ok.all():
        warnings.warn(f"excluding {int((~ok).sum())} nonpositive or nonfinite sweep points", RuntimeWarning, stacklevel=2)
    x, y = x[ok], y[ok]
    if len(x) < 4:
        raise ValueError(f"need >= 4 positive sweep points, have {len(x)}")
    if x.max() / x.min() < 4 * (1 - 1e-12):
        raise ValueError(f"sweep spans a factor {x.max() / x.min():.3g} < 4")
    lx, ly = np.log(x), np.log(y)
    w = np.ones_like(lx)
    if yerr is not None:
        rel = np.asarray(yerr, dtype=float)[ok] / y
        if np.all(rel > 0):
            w = 1.0 / rel**2
    W = w.sum()
    mx, my = (w * lx).sum() / W, (w * ly).sum() / W
    sxx = (w * (lx - mx) ** 2).sum()
    slope = (w * (lx - mx) * (ly - my)).sum() / sxx
    intercept = my - slope * mx
    resid = ly - (intercept + slope * lx)
    dof = len(x) - 2
    s2 = (w * resid**2).sum() / dof if dof > 0 else 0.0
    return FitResult(float(slope), float(math.sqrt(max(s2, 0.0) / sxx)), float(intercept), int(len(x)))


@dataclass(frozen=True)
class SupportWidth:
    """Half-width |z| where a profile first falls below `level` of its value at z = 0.

    When no crossing occurs on a side, `exceeds_range` is set and width is the probe range.
    """

    width: float
    exceeds_range: bool


def support_width(offsets, profile, level: float = 0.1) -> SupportWidth:
    """Outward crossing of level*profile(0) on each side of z = 0; the larger half-width is reported."""
    s = np.asarray(offsets, dtype=float)
    v = np.asarray(profile, dtype=float)
    i0 = int(np.argmin(np.abs(s)))
    thr = level * v[i0]
    widths = []
    for step in (1, -1):
        j = i0
        hit = None
        while 0 <= j + step < len(s):
            if v[j + step] < thr:
                a, b = v[j], v[j + step]
                f = (a - thr) / (a - b)
                hit = abs(s[j] + f * (s[j + step] - s[j]) - s[i0])
                break
            j += step
        widths.append(hit)
    if any(w is None for w in widths):
        return SupportWidth(float(np.max(np.abs(s - s[i0]))), True)
    return SupportWidth(float(max(widths)), False)


# ---------------------------------------------------------------- theory oracle


@dataclass(frozen=True)
class TheoryParams:
    """Dimensionless inputs; lambda/L = eps and ell_c/lambda = eta with L = 1."""

    sigma0: float
    sigma_n: float
    delta: float
    eta: float
    epsilon: float
    mu: float
    n_c: float
    l: float
    Sigma: float = 0.0


@dataclass(frozen=True)
class TheoryPrediction:
    v_c: float
    v_c_first: float
    v_c_n: float
    v_w: float
    v_w_n: float
    snr_c: float
    snr_c_n: float
    snr_w: float
    snr_w_n: float
    snr_c_tot: float
    snr_w_tot: float
    amplitude_c: float
    lambda_m: float
    extrapolated: bool
    notes: tuple = ()


def theory_predict(p: TheoryParams) -> TheoryPrediction:
    """Scaling laws up to constants, with a ^ b = min and a v b = max applied as written."""
    lam, L = p.epsilon, 1.0
    lc_over_lam = p.eta
    d = p.delta
    notes = []
    if not 0 <= d < 2:
        notes.append("delta outside [0, 2)")
    if not 0 < p.eta <= 1:
        notes.append("eta outside (0, 1]")
    if p.mu <= 1:
        notes.append("mu <= 1")
    if p.mu**2 * p.epsilon >= 1:
        notes.append("mu^2 eps >= 1")
    if p.n_c < 1:
        notes.append("N_C < 1")
    if p.n_c > p.l / lam * (1 + 1e-12):
        notes.append("N_C > l/lambda")
    damp1, damp2 = math.exp(-p.Sigma * L), math.exp(-2 * p.Sigma * L)
    geo = min((L / lam) ** 4, (p.n_c * p.mu) ** 4)
    a_term = p.mu**-2 * lc_over_lam ** (3 - d) * (lam / L) ** min(1 - d, 0.0) * geo
    b_term = lc_over_lam ** min(3 - d, 2.0) * p.n_c**4
    v_c_first = damp2 * p.sigma0**2 * p.mu**-2 * lc_over_lam ** (3 - d) * (lam / L) ** (4 + min(1 - d, 0.0)) * geo
    v_c = damp2 * p.sigma0**2 * (lam / L) ** 4 * max(a_term, b_term)
    v_c_n = damp1 * p.sigma_n**2 * (lam / L) ** 4 * p.n_c**4
    v_w = damp1 * p.sigma0**2
    v_w_n = p.sigma_n**2
    inv = lambda s: math.inf if s == 0 else 1.0 / s
    aperture = min((L / (p.n_c * lam)) ** 2, p.mu**2)
    snr_c = inv(p.sigma0) * min(p.mu * (1 / lc_over_lam) ** ((3 - d) / 2) * (L / lam) ** min((1 - d) / 2, 0.0),
                                (1 / lc_over_lam) ** min((3 - d) / 2, 1.0) * aperture)
    snr_c_n = math.exp(-0.5 * p.Sigma * L) * inv(p.sigma_n) * aperture
    snr_w = inv(p.sigma0)
    snr_w_n = math.exp(-0.5 * p.Sigma * L) * inv(p.sigma_n)
    amp = math.exp(-p.Sigma) * p.epsilon ** 2 * min(p.n_c * p.mu, 1.0 / p.epsilon) ** 2
    if 0 < p.sigma_n < 1 and d < 2:
        tau = -math.log(p.sigma_n)
        lc = p.eta * lam
        lambda_m = (p.sigma0**2 * lc ** (3 - d) * L / (tau * (1 - d / 2))) ** (1 / (4 - d))
    else:
        lambda_m = math.nan
        notes.append("lambda_m needs 0 < sigma_n < 1")
    return TheoryPrediction(v_c, v_c_first, v_c_n, v_w, v_w_n, snr_c, snr_c_n, snr_w, snr_w_n,
                            min(snr_c, snr_c_n), min(snr_w, snr_w_n), amp, lambda_m,
                            bool([n for n in notes if not n.startswith("lambda_m")]), tuple(notes))


def amplitude_factor(epsilon: float, gamma: float, r0: float, mu: float) -> float:
    """eps^(2(1-gamma)) ((r0 mu) ^ eps^(gamma-1))^2, the CB peak scaling."""
    return epsilon ** (2 * (1 - gamma)) * min(r0 * mu, epsilon ** (gamma - 1)) ** 2


def theory_params(exp: ExperimentConfig, Sigma: float = 0.0) -> TheoryParams:
    s, c = exp.source, exp.cb
    l = exp.detector.side if exp.detector.side is not None else exp.grid.box
    return TheoryParams(sigma0=exp.medium.sigma0, sigma_n=exp.noise.sigma_n, delta=exp.medium.delta, eta=exp.medium.eta,
                        epsilon=s.epsilon, mu=s.mu, n_c=c.r0 * s.epsilon ** (-c.gamma), l=l, Sigma=Sigma)


# variance law per image key; total adds the two independent parts
THEORY_VARIANCE = {"WB/single": ("v_w",), "WB/noise": ("v_w_n",), "WB/total": ("v_w", "v_w_n"),
                   "CB/single": ("v_c",), "CB/noise": ("v_c_n",), "CB/total": ("v_c", "v_c_n")}


def predicted_variance(exp: ExperimentConfig, key: str, Sigma: float = 0.0) -> float:
    t = theory_predict(theory_params(exp, Sigma))
    return float(sum(getattr(t, a) for a in THEORY_VARIANCE[key]))


def predicted_slope(exp: ExperimentConfig, key: str) -> float | None:
    """Log-log slope of the predicted variance along the configured sweep (None without a sweep)."""
    e = exp.ensemble
    if e.sweep_axis is None or len(e.sweep_values) < 2:
        return None
    x = np.asarray(e.sweep_values, dtype=float)
    pts = [apply_sweep(exp, e.sweep_axis, v) for v in x]
    y = np.array([predicted_variance(p, key, sigma_quadrature(p.medium, p.source)) for p in pts])
    if np.any(x <= 0) or np.any(y <= 0):
        return None
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


# ---------------------------------------------------------------- ensemble runs


@dataclass
class EnsembleStats:
    """Images per (functional/component) key as arrays (n_sweep, n_realizations, n_probe)."""

    axis: str | None
    values: tuple
    offsets: np.ndarray
    points: np.ndarray
    samples: dict
    sigma: tuple = ()
    n_requested: int = 0
    error: str | None = None

    @property
    def n_completed(self) -> int:
        return next(iter(self.samples.values())).shape[1] if self.samples else 0

    @property
    def complete(self) -> bool:
        return self.error is None

    def stats(self, key: str, i: int = 0) -> PointStats:
        return point_stats(self.samples[key][i])

    def center_index(self) -> int:
        return int(np.argmin(np.abs(self.offsets)))

    def at_center(self, key: str) -> dict:
        """Per sweep point: mean, var, var_err, snr at z = 0."""
        c = self.center_index()
        rows = [self.stats(key, i) for i in range(len(self.values))]
        return {"mean": np.array([r.mean[c] for r in rows]), "var": np.array([r.var[c] for r in rows]),
                "var_err": np.array([r.var_err[c] for r in rows]), "snr": np.array([r.snr[c] for r in rows]),
                "mean_err": np.array([r.mean_err[c] for r in rows])}

    def fit(self, key: str, quantity: str = "var", x=None) -> FitResult:
        xs = np.asarray(self.values if x is None else x, dtype=float)
        c = self.at_center(key)
        err = c["var_err"] if quantity == "var" else c["mean_err"] if quantity == "mean" else None
        return fit_exponent(xs, c[quantity], err)

    def support(self, key: str, i: int = 0) -> SupportWidth:
        return support_width(self.offsets, self.stats(key, i).var)


def _probe(exp: ExperimentConfig) -> np.ndarray:
    e = exp.ensemble
    hw = e.probe_half_width if e.probe_half_width is not None else 8 * exp.source.epsilon * exp.source.mu
    return probe_line(hw, e.n_probe)


class _Runner:
    def __init__(self, exp: ExperimentConfig, cfg: EnsembleConfig):
        self.cfg = cfg
        self.base = exp
        axis = cfg.sweep_axis
        self.points = [apply_sweep(exp, axis, v) for v in cfg.sweep_values] if axis else [exp]
        # seeds follow the ensemble base seed; streams keep medium and noise independent
        self.points = [replace(p, medium=replace(p.medium, seed=cfg.base_seed), noise=replace(p.noise, seed=cfg.base_seed))
                       for p in self.points]
        self.grid = exp.grid.grid()
        self.probe = _probe(exp)
        self.sigmas = [sigma_quadrature(p.medium, p.source) for p in self.points]
        # one rejection threshold across a sigma0 sweep so every point shares the same medium draws
        self.sigma_reject = max(p.medium.sigma0 for p in self.points)
        self.means = [self._mean(p, s) for p, s in zip(self.points, self.sigmas)]

    def _mean(self, p: ExperimentConfig, Sigma: float) -> Measurement:
        if self.cfg.analytic_mean:
            return analytic_measurement(p.source, 1.0, Sigma, p.detector, self.grid)
        return assemble_measurement(mean_field(p.source, 1.0, self.grid, Sigma), None, None, p.detector, self.grid)

    def _unit_born(self, p: ExperimentConfig, r: int, cache: dict) -> np.ndarray:
        med = replace(p.medium, sigma0=self.sigma_reject)
        key = ("born", med, p.source, p.detector)
        if key not in cache:
            rf = sample_field(med, self.grid, p.source.epsilon, r)
            f = born_response(source_spectrum(p.source, self.grid), rf.values, self.grid, 1.0,
                              band=min(p.source.k_max, float(self.grid.kmag().max())))
            cache[key] = restrict(f, self.grid, p.detector)
        return cache[key]

    def _unit_noise(self, p: ExperimentConfig, r: int, cache: dict) -> np.ndarray:
        nz = replace(p.noise, sigma_n=1.0)
        key = ("noise", nz, p.source.epsilon, p.detector)
        if key not in cache:
            g = self.grid
            if self.cfg.local_noise:
                g = detector_grid(self.grid, p.detector, margin=6 * p.source.epsilon)
            cache[key] = restrict(detector_noise(nz, p.source.epsilon, g, r), self.grid, p.detector)
        return cache[key]

    def realization(self, r: int) -> dict:
        cache: dict = {}
        out = {}
        for i, (p, Sigma, mean) in enumerate(zip(self.points, self.sigmas, self.means)):
            comps = dict(mean.components)
            need = {c for comp in self.cfg.components for c in COMPONENTS[comp]}
            if "born" in need and p.medium.sigma0 > 0:
                comps["born"] = p.medium.sigma0 * np.exp(-Sigma / 2) * self._unit_born(p, r, cache)
            if "noise" in need and p.noise.sigma_n > 0:
                comps["noise"] = p.noise.sigma_n * self._unit_noise(p, r, cache)
            meas = replace(mean, components=comps)
            for comp in self.cfg.components:
                m = meas.select(*COMPONENTS[comp])
                if "WB" in self.cfg.functionals:
                    out[("WB/" + comp, i)] = wb_image(m, self.probe).values
                if "CB" in self.cfg.functionals:
                    p.cb_config().check_detector(p.detector.side)
                    out[("CB/" + comp, i)] = cb_image(m, self.probe, p.cb_config()).values
        return out


def run_ensemble(cfg: EnsembleConfig, exp: ExperimentConfig, progress=None) -> EnsembleStats:
    """Images for every realization and sweep point; reduction ordered by realization index.

    A failure in realization r keeps realizations 0..r-1 and records the error, provided at least
    3 completed (enough for a jackknife); otherwise the exception propagates.
    """
    runner = _Runner(exp, cfg)
    n = cfg.n_realizations
    results, error = [], None
    with sfft.set_workers(1 if cfg.threads > 1 else -1):
        try:
            if cfg.threads > 1:
                with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
                    futures = [pool.submit(runner.realization, r) for r in range(n)]
                    try:
                        for f in futures:
                            results.append(f.result())
                            if progress is not None:
                                progress(len(results), n)
                    except BaseException:
                        for f in futures:
                            f.cancel()
                        raise
            else:
                for r in range(n):
                    results.append(runner.realization(r))
                    if progress is not None:
                        progress(r + 1, n)
        except (MemoryError, KeyboardInterrupt, RuntimeError, ValueError) as exc:
            if len(results) < 3:
                raise
            error = f"{type(exc).__name__} after {len(results)} of {n} realizations: {exc}"
    keys = sorted({k for k, _ in results[0]})
    n_sweep = len(runner.points)
    samples = {k: np.stack([np.stack([res[(k, i)] for res in results]) for i in range(n_sweep)]) for k in keys}
    probe = runner.probe
    offsets = probe @ np.array([0.0, 1.0, 0.0])
    values = tuple(cfg.sweep_values) if cfg.sweep_axis else (float("nan"),)
    return EnsembleStats(cfg.sweep_axis, values, offsets, probe, samples, sigma=tuple(runner.sigmas),
                         n_requested=n, error=error)
