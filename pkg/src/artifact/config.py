"""Experiment configuration: one YAML file with medium, source, noise, detector, cb, grid and ensemble sections."""
from __future__ import annotations

import dataclasses
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
import yaml

from .imaging import CBConfig
from .propagate import Detector, NoiseSpec
from .randmedium import Grid3D, MediumSpec
from .source import SourceSpec

SWEEP_AXES = ("sigma0", "sigma_n", "mu", "n_c", "gamma", "l", "epsilon", "delta", "eta")
FUNCTIONALS = ("WB", "CB")
COMPONENTS = {"single": ("mean", "born"), "noise": ("mean", "noise"), "total": ("mean", "born", "noise")}


class ConfigError(ValueError):
    """Invalid configuration; `problems` lists every violated constraint."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class GridSettings:
    n: int = 96
    box: float = 3.0

    def grid(self) -> Grid3D:
        return Grid3D(self.n, self.box)


@dataclass(frozen=True)
class CBSettings:
    """Correlation-ball parameters; eps, k0 and mu come from the source section."""

    r0: float = 0.25
    gamma: float = 0.5
    rolloff: float = 0.1
    band_width: float = 4.0
    n_theta: int = 16
    n_phi: int = 32
    aperture: float | None = None


@dataclass(frozen=True)
class EnsembleConfig:
    n_realizations: int = 32
    base_seed: int = 0
    sweep_axis: str | None = None
    sweep_values: tuple = ()
    functionals: tuple = ("WB", "CB")
    components: tuple = ("single", "noise")
    n_probe: int = 65
    probe_half_width: float | None = None
    threads: int = 1
    analytic_mean: bool = False
    local_noise: bool = False

    def __post_init__(self):
        object.__setattr__(self, "sweep_values", tuple(float(v) for v in self.sweep_values))
        object.__setattr__(self, "functionals", tuple(self.functionals))
        object.__setattr__(self, "components", tuple(self.components))
        if self.n_realizations < 8:
            raise ValueError(f"n_realizations must be >= 8 for jackknife error bars, got {self.n_realizations}")
        if self.sweep_axis is not None and self.sweep_axis not in SWEEP_AXES:
            raise ValueError(f"unknown sweep axis {self.sweep_axis!r}; choose from {SWEEP_AXES}")
        if self.sweep_axis is not None and not self.sweep_values:
            raise ValueError("sweep_axis given without sweep_values")
        bad = [f for f in self.functionals if f not in FUNCTIONALS]
        if bad:
            raise ValueError(f"unknown functionals {bad}")
        bad = [c for c in self.components if c not in COMPONENTS]
        if bad:
            raise ValueError(f"unknown components {bad}")
        if self.n_probe < 3:
            raise ValueError("n_probe must be >= 3")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    medium: MediumSpec = field(default_factory=MediumSpec)
    source: SourceSpec = field(default_factory=SourceSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    detector: Detector = field(default_factory=Detector)
    cb: CBSettings = field(default_factory=CBSettings)
    grid: GridSettings = field(default_factory=GridSettings)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    out_dir: str = "results"
    verbosity: int = 1

    def cb_config(self) -> CBConfig:
        c, s = self.cb, self.source
        return CBConfig(r0=c.r0, gamma_exp=c.gamma, epsilon=s.epsilon, k0=s.k0, mu=s.mu, band_width=c.band_width,
                        rolloff=c.rolloff, n_theta=c.n_theta, n_phi=c.n_phi, aperture=c.aperture)

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)


_SECTIONS = {"medium": MediumSpec, "source": SourceSpec, "noise": NoiseSpec, "detector": Detector,
             "cb": CBSettings, "grid": GridSettings, "ensemble": EnsembleConfig}


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _build(cls, data: dict, section: str, problems: list[str]):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        problems.append(f"{section}: expected a mapping")
        return None
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        problems.append(f"{section}: unknown keys {unknown}")
        return None
    kwargs = dict(data)
    if cls is Detector and "center" in kwargs:
        kwargs["center"] = tuple(kwargs["center"])
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        problems.append(f"{section}: {exc}")
        return None


def cross_check(cfg: ExperimentConfig) -> list[str]:
    """Constraints spanning several sections."""
    problems = []
    s, c, d = cfg.source, cfg.cb, cfg.detector
    n_c = c.r0 * s.epsilon ** (-c.gamma)
    if n_c < 1 - 1e-12:
        problems.append(f"cb: N_C = r0 eps^-gamma = {n_c:.3g} < 1 (subwavelength correlation ball not allowed)")
    if d.side is not None and c.r0 >= d.side:
        problems.append(f"cb: r0 = {c.r0} must be smaller than the detector side l = {d.side}")
    g = cfg.grid
    if g.n % 2 or g.n < 2:
        problems.append("grid: n must be even")
    else:
        h = g.box / g.n
        if h > s.epsilon * cfg.medium.eta / 2 * (1 + 1e-9) and cfg.medium.sigma0 > 0:
            problems.append(f"grid: spacing {h:.4g} does not resolve eps*eta = {s.epsilon * cfg.medium.eta:.4g} "
                            f"(need >= 2 samples per correlation length)")
        if np.pi / h < s.k_center:
            problems.append(f"grid: Nyquist {np.pi / h:.4g} below the carrier k0/eps = {s.k_center:.4g}")
        if d.side is not None:
            lo = -g.box / 2
            hi = g.box / 2 - h
            if any(ci - d.side / 2 < lo or ci + d.side / 2 > hi for ci in d.center):
                problems.append("detector: cube extends outside the grid box")
    e = cfg.ensemble
    if e.sweep_axis == "n_c" and any(v < 1 for v in e.sweep_values):
        problems.append("ensemble: N_C sweep values must be >= 1")
    if e.sweep_axis == "delta" and any(not 0 <= v < 2 for v in e.sweep_values):
        problems.append("ensemble: delta sweep values must lie in [0, 2)")
    if e.sweep_axis is not None:
        for v in e.sweep_values:
            try:
                apply_sweep(cfg, e.sweep_axis, v)
            except ValueError as exc:
                problems.append(f"ensemble: sweep value {e.sweep_axis}={v}: {exc}")
    return problems


def from_dict(data: dict) -> ExperimentConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(["top level: expected a mapping"])
    problems = []
    unknown = sorted(set(data) - set(_SECTIONS) - {"out_dir", "verbosity"})
    if unknown:
        problems.append(f"top level: unknown keys {unknown}")
    built = {name: _build(cls, data.get(name), name, problems) for name, cls in _SECTIONS.items()}
    # sections that failed fall back to defaults so cross-section rules are still reported
    built = {name: cls() if built[name] is None else built[name] for name, cls in _SECTIONS.items()}
    cfg = ExperimentConfig(**built, out_dir=str(data.get("out_dir", "results")), verbosity=int(data.get("verbosity", 1)))
    problems += cross_check(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        text = fh.read()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark is not None else ""
        raise ConfigError([f"YAML parse error{where}: {getattr(exc, 'problem', exc)}"]) from exc
    return from_dict(data)


def apply_sweep(cfg: ExperimentConfig, axis: str, value: float) -> ExperimentConfig:
    """Copy of cfg with one sweep parameter set."""
    v = float(value)
    if axis == "sigma0":
        return replace(cfg, medium=replace(cfg.medium, sigma0=v))
    if axis == "sigma_n":
        return replace(cfg, noise=replace(cfg.noise, sigma_n=v))
    if axis == "mu":
        return replace(cfg, source=replace(cfg.source, mu=v))
    if axis == "n_c":
        return replace(cfg, cb=replace(cfg.cb, r0=v * cfg.source.epsilon ** cfg.cb.gamma))
    if axis == "gamma":
        return replace(cfg, cb=replace(cfg.cb, gamma=v))
    if axis == "l":
        return replace(cfg, detector=replace(cfg.detector, side=v))
    if axis == "epsilon":
        return replace(cfg, source=replace(cfg.source, epsilon=v))
    if axis == "delta":
        return replace(cfg, medium=replace(cfg.medium, delta=v))
    if axis == "eta":
        return replace(cfg, medium=replace(cfg.medium, eta=v))
    raise ValueError(f"unknown sweep axis {axis!r}")


def with_overrides(cfg: ExperimentConfig, seed: int | None = None, threads: int | None = None,
                   grid_n: int | None = None, sweep: str | None = None) -> ExperimentConfig:
    """Apply CLI overrides and re-validate."""
    e = cfg.ensemble
    if seed is not None:
        e = replace(e, base_seed=int(seed))
    if threads is not None:
        e = replace(e, threads=int(threads))
    if sweep is not None and sweep != e.sweep_axis:
        raise ConfigError([f"--sweep {sweep!r} does not match the configured sweep axis {e.sweep_axis!r}"])
    g = cfg.grid if grid_n is None else replace(cfg.grid, n=int(grid_n))
    out = dataclasses.replace(cfg, ensemble=e, grid=g)
    problems = cross_check(out)
    if problems:
        raise ConfigError(problems)
    return out
