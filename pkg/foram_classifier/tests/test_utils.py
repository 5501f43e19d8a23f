from pathlib import Path as _P
import sys

import numpy as np
import pytest

ROOT = _P(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT))

from app.core.errors import ArtifactMissingError, ModelLoadError
from app.core.utils import (
    atomic_write,
    file_sha256,
    load_arrays,
    read_jsonl,
    read_png,
    save_arrays,
    substream,
    write_json,
    write_jsonl,
    write_png,
)


def test_substream_is_reproducible_and_independent():
    a = substream(7, "dropout", 3).random(5)
    b = substream(7, "dropout", 3).random(5)
    c = substream(7, "dropout", 4).random(5)
    d = substream(7, "shuffle", 3).random(5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_atomic_write_leaves_no_partial_file(tmp_path):
    target = tmp_path / "out.txt"
    with pytest.raises(RuntimeError):
        with atomic_write(target, "w") as fh:
            fh.write("half")
            raise RuntimeError("boom")
    assert not target.exists()
    assert list(tmp_path.iterdir()) == []


def test_array_container_round_trip_is_exact_and_deterministic(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {"w": rng.normal(size=(5, 3)), "b": np.arange(3, dtype=np.float64)}
    p1 = save_arrays(tmp_path / "a.npz", arrays, {"kind": "test"})
    p2 = save_arrays(tmp_path / "b.npz", arrays, {"kind": "test"})
    assert p1.read_bytes() == p2.read_bytes()
    loaded, meta = load_arrays(p1)
    assert meta["kind"] == "test"
    for k in arrays:
        np.testing.assert_array_equal(loaded[k], arrays[k])
    # readable by numpy directly
    with np.load(p1) as npz:
        np.testing.assert_array_equal(npz["w"], arrays["w"])


def test_load_arrays_errors(tmp_path):
    with pytest.raises(ArtifactMissingError):
        load_arrays(tmp_path / "missing.npz")
    bad = tmp_path / "bad.npz"
    bad.write_bytes(b"not a zip")
    with pytest.raises(ModelLoadError):
        load_arrays(bad)


def test_png_and_json_helpers(tmp_path):
    px = np.random.default_rng(1).integers(0, 256, size=(8, 9, 3)).astype(np.uint8)
    write_png(tmp_path / "img.png", px)
    np.testing.assert_array_equal(read_png(tmp_path / "img.png"), px)

    rows = [{"b": 1, "a": [1, 2]}, {"c": "x"}]
    write_jsonl(tmp_path / "rows.jsonl", rows)
    assert read_jsonl(tmp_path / "rows.jsonl") == rows

    write_json(tmp_path / "x.json", {"z": 1, "a": 2})
    assert (tmp_path / "x.json").read_text() == '{\n  "a": 2,\n  "z": 1\n}\n'
    assert len(file_sha256(tmp_path / "x.json")) == 64
