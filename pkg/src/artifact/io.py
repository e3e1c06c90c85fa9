"""Serialization: binary field dumps with a small header, RFC-4180 CSV tables and JSON summaries."""
from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path

import numpy as np

from .randmedium import Grid3D, RandomField

MAGIC = b"ARTF"
FORMAT_VERSION = 1
# magic, version, n, box, seed, realization, epsilon, 16-char spec hash
_HEADER = struct.Struct("<4sIIdqqd16s")


def dump_field(path, rf: RandomField) -> None:
    """Write a realization as a little-endian float64 array behind a fixed header."""
    g = rf.grid
    if g.center != (0.0, 0.0, 0.0):
        raise ValueError("field dumps support grids centered at the origin only")
    head = _HEADER.pack(MAGIC, FORMAT_VERSION, g.n, g.box, rf.seed, rf.realization, rf.epsilon,
                        rf.spec_hash.encode("ascii").ljust(16, b"\0")[:16])
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(np.ascontiguousarray(rf.values, dtype="<f8").tobytes())


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, n, box, seed, real, eps, h = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a field dump (bad magic {magic!r})")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    return {"n": n, "box": box, "seed": seed, "realization": real, "epsilon": eps,
            "spec_hash": h.rstrip(b"\0").decode("ascii")}


def load_field(path, expected_hash: str | None = None) -> RandomField:
    """Read a dump; with expected_hash, refuse a realization drawn from a different medium spec."""
    head = read_header(path)
    if expected_hash is not None and head["spec_hash"] != expected_hash:
        raise ValueError(f"{path}: spec hash {head['spec_hash']} does not match {expected_hash}")
    n = head["n"]
    data = np.fromfile(path, dtype="<f8", offset=_HEADER.size)
    if data.size != n**3:
        raise ValueError(f"{path}: expected {n**3} samples, found {data.size}")
    return RandomField(Grid3D(n, head["box"]), data.reshape(n, n, n).astype(float), head["seed"],
                       head["realization"], head["epsilon"], head["spec_hash"])


def fmt(v) -> str:
    """Shortest round-trip text for a number; empty for None."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty CSV")
    return rows[0], rows[1:]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        # JSON has no inf/nan; keep them readable
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def write_json(path, data: dict) -> None:
    Path(path).write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())
