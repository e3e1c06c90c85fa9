from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from artifact.io import (_HEADER, dump_field, fmt, load_field, read_csv, read_header, read_json, write_csv,
                         write_json)
from artifact.randmedium import Grid3D, MediumSpec, sample_field


@pytest.fixture(scope="module")
def field():
    return sample_field(MediumSpec(sigma0=0.1, seed=4), Grid3D(16, 2.0), 0.25, realization=3)


def test_field_dump_roundtrip(tmp_path, field):
    p = tmp_path / "v.bin"
    dump_field(p, field)
    assert p.stat().st_size == _HEADER.size + 8 * 16**3
    head = read_header(p)
    assert head == {"n": 16, "box": 2.0, "seed": 4, "realization": 3, "epsilon": 0.25, "spec_hash": field.spec_hash}
    back = load_field(p, expected_hash=field.spec_hash)
    np.testing.assert_array_equal(back.values, field.values)
    assert back.grid == field.grid


def test_field_dump_rejects_other_spec(tmp_path, field):
    p = tmp_path / "v.bin"
    dump_field(p, field)
    other = sample_field(MediumSpec(sigma0=0.2, seed=4), Grid3D(16, 2.0), 0.25)
    with pytest.raises(ValueError, match="does not match"):
        load_field(p, expected_hash=other.spec_hash)


def test_field_dump_detects_corruption(tmp_path, field):
    p = tmp_path / "v.bin"
    dump_field(p, field)
    raw = p.read_bytes()
    (tmp_path / "short.bin").write_bytes(raw[:-8])
    with pytest.raises(ValueError, match="expected"):
        load_field(tmp_path / "short.bin")
    (tmp_path / "bad.bin").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError, match="magic"):
        read_header(tmp_path / "bad.bin")
    (tmp_path / "trunc.bin").write_bytes(raw[:10])
    with pytest.raises(ValueError, match="truncated"):
        read_header(tmp_path / "trunc.bin")


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_fmt_roundtrips_floats(x):
    assert float(fmt(x)) == x


def test_fmt_special_values():
    assert fmt(None) == ""
    assert fmt(True) == "true"
    assert fmt(np.int64(7)) == "7"
    assert fmt(np.float32(0.5)) == "0.5"


def test_csv_rfc4180(tmp_path):
    p = tmp_path / "t.csv"
    write_csv(p, ["key", "x"], [["a,b", 1.5], ['say "hi"', None]])
    raw = p.read_bytes()
    assert raw == b'key,x\r\n"a,b",1.5\r\n"say ""hi""",\r\n'
    header, rows = read_csv(p)
    assert header == ["key", "x"] and rows == [["a,b", "1.5"], ['say "hi"', ""]]


def test_json_nonfinite_and_numpy(tmp_path):
    p = tmp_path / "s.json"
    write_json(p, {"b": np.arange(3), "a": (math.inf, -math.inf, math.nan), "c": np.float64(2.5)})
    d = read_json(p)
    assert d == {"a": ["inf", "-inf", "nan"], "b": [0, 1, 2], "c": 2.5}
    assert p.read_text().index('"a"') < p.read_text().index('"b"')
