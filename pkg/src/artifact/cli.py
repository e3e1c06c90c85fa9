"""Command line front-end: validate a config, run an ensemble, report on a results directory."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, apply_sweep, load_config, with_overrides
from .ensemble import (EnsembleStats, amplitude_factor, fit_exponent, predicted_slope, predicted_variance,
                       run_ensemble)
from .io import read_csv, read_json, write_csv, write_json

EXIT_OK = 0
EXIT_INVALID = 3
EXIT_RUNTIME = 4
EXIT_NO_INPUT = 5

SUPPORT_FACTOR = 8.0
UNIFORM_RANGE = (0.5, 2.0)
AMPLITUDE_AXES = ("gamma", "n_c", "mu", "epsilon")

log = logging.getLogger("artifact")


def slug(key: str) -> str:
    return key.replace("/", "_").lower()


def slope_tolerance(predicted: float) -> float:
    return max(0.2, 0.1 * abs(predicted))


# ---------------------------------------------------------------- summaries


def _check(name: str, passed: bool, measured, expected, detail: str = "") -> dict:
    return {"name": name, "status": "PASS" if passed else "FAIL", "measured": measured, "expected": expected,
            "detail": detail}


def summarize(exp: ExperimentConfig, st: EnsembleStats) -> dict:
    """Per-key statistics at z = 0, fits against the sweep axis, predictions and checks."""
    e = exp.ensemble
    points = [apply_sweep(exp, e.sweep_axis, v) for v in e.sweep_values] if e.sweep_axis else [exp]
    keys, checks = {}, []
    for key in sorted(st.samples):
        c = st.at_center(key)
        widths = [st.support(key, i) for i in range(len(points))]
        entry = {"center": {k: v.tolist() for k, v in c.items()},
                 "support_width": [w.width for w in widths], "support_exceeds_range": [w.exceeds_range for w in widths],
                 "predicted_variance": [predicted_variance(p, key, s) for p, s in zip(points, st.sigma)]}
        pred = predicted_slope(exp, key)
        entry["predicted_slope"] = pred
        if e.sweep_axis and len(points) >= 4:
            try:
                fit = st.fit(key, "var")
                entry["fit"] = {"slope": fit.slope, "stderr": fit.stderr, "n_used": fit.n_used}
                if pred is not None:
                    tol = slope_tolerance(pred)
                    checks.append(_check(f"{key} variance slope vs {e.sweep_axis}", abs(fit.slope - pred) <= tol,
                                         fit.slope, pred, f"tolerance {tol:g}, stderr {fit.stderr:.3g}"))
            except ValueError as exc:
                entry["fit_error"] = str(exc)
            if key.startswith("CB/") and e.sweep_axis in AMPLITUDE_AXES:
                amp = [amplitude_factor(p.source.epsilon, p.cb.gamma, p.cb.r0, p.source.mu) for p in points]
                try:
                    fa = fit_exponent(amp, c["mean"], c["mean_err"])
                    entry["amplitude_fit"] = {"slope": fa.slope, "stderr": fa.stderr}
                    checks.append(_check(f"{key} mean vs amplitude factor", abs(fa.slope - 1) <= 0.15, fa.slope, 1.0,
                                         "tolerance 0.15"))
                except ValueError as exc:
                    entry["amplitude_fit_error"] = str(exc)
        for i, p in enumerate(points):
            tag = f" [{e.sweep_axis}={e.sweep_values[i]:g}]" if e.sweep_axis else ""
            var = st.stats(key, i).var
            if key == "WB/noise":
                v0 = var[st.center_index()]
                ratio = var / v0 if v0 > 0 else np.full_like(var, np.nan)
                lo, hi = float(np.min(ratio)), float(np.max(ratio))
                checks.append(_check(f"{key} uniformity{tag}", UNIFORM_RANGE[0] <= lo and hi <= UNIFORM_RANGE[1],
                                     [lo, hi], list(UNIFORM_RANGE), "Var(z)/Var(0) range on the probe line"))
            elif key in ("WB/single", "CB/single", "CB/noise"):
                bound = SUPPORT_FACTOR * p.source.epsilon * p.source.mu
                w = widths[i]
                checks.append(_check(f"{key} support width{tag}", (not w.exceeds_range) and w.width <= bound,
                                     w.width, bound, "exceeds probe range" if w.exceeds_range else ""))
        keys[slug(key)] = entry
    return {"version": __version__, "config": exp.to_dict(), "status": "complete" if st.complete else "partial",
            "error": st.error, "n_requested": st.n_requested, "n_completed": st.n_completed,
            "sweep_axis": e.sweep_axis, "sweep_values": list(st.values) if e.sweep_axis else [],
            "Sigma": list(st.sigma), "keys": keys, "checks": checks}


def write_results(out: Path, exp: ExperimentConfig, st: EnsembleStats) -> list[str]:
    out.mkdir(parents=True, exist_ok=True)
    files = ["config.yaml"]
    (out / "config.yaml").write_text(exp.to_yaml())
    values = st.values if st.axis else (None,)
    for key in sorted(st.samples):
        s = slug(key)
        rows, img = [], []
        for i, v in enumerate(values):
            ps = st.stats(key, i)
            for j, z in enumerate(st.offsets):
                rows.append([v, z, ps.mean[j], ps.mean_err[j], ps.var[j], ps.var_err[j], ps.snr[j]])
                img.append([v, z, ps.mean[j]])
        write_csv(out / f"ensemble_{s}.csv", ["sweep_value", "z", "mean", "mean_err", "var", "var_err", "snr"], rows)
        write_csv(out / f"image_{s}.csv", ["sweep_value", "z", "value"], img)
        write_json(out / f"image_{s}.json", {"version": __version__, "config": exp.to_dict(), "key": key,
                                              "sweep_values": list(values), "z": st.offsets,
                                              "mean_image": [st.stats(key, i).mean for i in range(len(values))]})
        files += [f"ensemble_{s}.csv", f"image_{s}.csv", f"image_{s}.json"]
    summary = summarize(exp, st)
    srows = []
    for key in sorted(st.samples):
        e = summary["keys"][slug(key)]
        c = e["center"]
        for i, v in enumerate(values):
            srows.append([key, v, st.sigma[i], c["mean"][i], c["mean_err"][i], c["var"][i], c["var_err"][i],
                          c["snr"][i], e["support_width"][i], e["support_exceeds_range"][i], e["predicted_variance"][i]])
    write_csv(out / "sweep.csv", ["key", "sweep_value", "Sigma", "mean0", "mean0_err", "var0", "var0_err", "snr0",
                                  "support_width", "support_exceeds_range", "predicted_var0"], srows)
    files.append("sweep.csv")
    summary["files"] = files + ["summary.json"]
    write_json(out / "summary.json", summary)
    return summary["files"]


# ---------------------------------------------------------------- commands


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    return with_overrides(cfg, seed=getattr(args, "seed", None), threads=getattr(args, "threads", None),
                          grid_n=getattr(args, "grid_n", None), sweep=getattr(args, "sweep", None))


def cmd_validate(args) -> int:
    if not Path(args.config).is_file():
        print(f"error: config file {args.config} not found", file=sys.stderr)
        return EXIT_NO_INPUT
    try:
        _load(args)
    except ConfigError as exc:
        for p in exc.problems:
            print(f"violation: {p}", file=sys.stderr)
        return EXIT_INVALID
    print("ok")
    return EXIT_OK


def cmd_run(args) -> int:
    if not Path(args.config).is_file():
        print(f"error: config file {args.config} not found", file=sys.stderr)
        return EXIT_NO_INPUT
    try:
        exp = _load(args)
    except ConfigError as exc:
        for p in exc.problems:
            print(f"violation: {p}", file=sys.stderr)
        return EXIT_INVALID
    if not args.verbose and exp.verbosity >= 2:
        log.setLevel(logging.INFO)
    out = Path(args.out if args.out is not None else exp.out_dir)
    exp = replace(exp, out_dir=str(out))

    def progress(done, total):
        log.info("realization %d/%d", done, total)

    try:
        st = run_ensemble(exp.ensemble, exp, progress=progress)
    except (MemoryError, RuntimeError, ValueError) as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    files = write_results(out, exp, st)
    log.info("wrote %d files to %s", len(files), out)
    if not st.complete:
        print(f"runtime failure, partial results kept: {st.error}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _yerr_snr(c: dict) -> list:
    out = []
    for m, me, v, ve, s in zip(c["mean"], c["mean_err"], c["var"], c["var_err"], c["snr"]):
        if not (isinstance(s, float) and v > 0 and m != 0):
            out.append(None)
        else:
            out.append(abs(s) * float(np.hypot(me / m, ve / (2 * v))))
    return out


def cmd_report(args) -> int:
    d = Path(args.results)
    if not d.is_dir() or not any(d.iterdir()):
        print(f"error: nothing to report in {d}", file=sys.stderr)
        return EXIT_NO_INPUT
    if not (d / "summary.json").is_file():
        print(f"error: missing inputs in {d}: summary.json", file=sys.stderr)
        return EXIT_NO_INPUT
    summary = read_json(d / "summary.json")
    missing = [f for f in summary.get("files", []) if not (d / f).is_file()]
    if missing:
        print(f"error: missing inputs in {d}: {', '.join(missing)}", file=sys.stderr)
        return EXIT_NO_INPUT
    axis = summary.get("sweep_axis")
    xs = summary.get("sweep_values") or []
    emitted = []
    for s, entry in sorted(summary["keys"].items()):
        c = entry["center"]
        if axis:
            for q, err in (("var", c["var_err"]), ("mean", c["mean_err"]), ("snr", _yerr_snr(c))):
                name = f"plot_{s}_{q}_vs_{axis}.csv"
                write_csv(d / name, ["x", "y", "yerr"], zip(xs, c[q], err))
                emitted.append(name)
        _, rows = read_csv(d / f"ensemble_{s}.csv")
        groups: dict = {}
        for r in rows:
            groups.setdefault(r[0], []).append((r[1], r[4], r[5]))
        for i, (_, series) in enumerate(groups.items()):
            name = f"plot_{s}_var_profile_{i}.csv"
            write_csv(d / name, ["x", "y", "yerr"], series)
            emitted.append(name)
    checks = summary.get("checks", [])
    print(f"results: {d}  status: {summary['status']}  realizations: {summary['n_completed']}/{summary['n_requested']}")
    if summary.get("error"):
        print(f"error: {summary['error']}")
    width = max([len(c["name"]) for c in checks] + [5])
    for c in checks:
        print(f"{c['status']:4}  {c['name']:<{width}}  measured {_short(c['measured'])}  expected {_short(c['expected'])}"
              + (f"  ({c['detail']})" if c["detail"] else ""))
    if not checks:
        print("no checks apply to this run")
    n_fail = sum(c["status"] == "FAIL" for c in checks)
    print(f"{len(checks) - n_fail} passed, {n_fail} failed; {len(emitted)} plot-data files written")
    return EXIT_OK


def _short(v) -> str:
    if isinstance(v, list):
        return "[" + ", ".join(_short(x) for x in v) + "]"
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="artifact", description="Wave and correlation imaging ensembles in random media.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("-v", "--verbose", action="count", default=0)
        p.add_argument("--config", required=True, help="YAML experiment file")
        p.add_argument("--seed", type=int, default=None, help="override ensemble.base_seed")
        p.add_argument("--threads", type=int, default=None, help="cap on worker threads")
        p.add_argument("--grid-n", dest="grid_n", type=int, default=None, help="override grid.n")
        p.add_argument("--sweep", default=None, help="sweep axis to run; must match the config")

    p = sub.add_parser("validate", help="check a config and report every violated constraint")
    common(p)
    p.set_defaults(func=cmd_validate)
    p = sub.add_parser("run", help="run the ensemble and write results")
    common(p)
    p.add_argument("--out", default=None, help="results directory (default: out_dir from the config)")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("report", help="summarize a results directory and emit plot data")
    p.add_argument("results", nargs="?", default=None)
    p.add_argument("--out", dest="results_opt", default=None, help="results directory")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.command == "report":
        args.results = args.results or args.results_opt
        if args.results is None:
            ap.error("report needs a results directory")
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
