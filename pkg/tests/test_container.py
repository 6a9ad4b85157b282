"""Binary artifact container: bit-exact round trips and corruption checks."""

import struct

import numpy as np
import pytest

from romuq import container
from romuq.errors import DataError


def bitwise_equal(a, b):
    return a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()


def test_round_trip_bit_exact(tmp_path, rng):
    # Values chosen to expose lossy paths: signed zero, denormals, extremes.
    floats = np.array(
        [[-0.0, 5e-324, np.finfo(np.float64).max], [1.0 / 3.0, -1e-300, 2.0**-1022]]
    )
    ints = np.array([np.iinfo(np.int64).min, -1, 0, np.iinfo(np.int64).max])
    noise = rng.normal(size=(7, 3))
    meta = {"nested": {"a": [1, 2.5, "s"], "b": None}, "flag": True}
    path = tmp_path / "artifact.bin"
    digest = container.write_container(
        path, "dataset", meta, {"floats": floats, "ints": ints, "noise": noise}
    )
    kind, meta_back, arrays = container.read_container(path)
    assert kind == "dataset"
    assert meta_back == meta
    assert list(arrays) == ["floats", "ints", "noise"]
    assert bitwise_equal(arrays["floats"], floats)
    assert bitwise_equal(arrays["noise"], noise)
    assert np.array_equal(arrays["ints"], ints)
    assert arrays["ints"].dtype == np.dtype("<i8")
    assert digest == container.file_sha256(path)


def test_identical_content_identical_bytes(tmp_path):
    arrays = {"x": np.arange(6.0).reshape(2, 3)}
    p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
    d1 = container.write_container(p1, "model", {"k": 1}, arrays)
    d2 = container.write_container(p2, "model", {"k": 1}, arrays)
    assert d1 == d2
    assert p1.read_bytes() == p2.read_bytes()


def test_scalar_and_empty_arrays(tmp_path):
    path = tmp_path / "s.bin"
    container.write_container(
        path, "model", {}, {"scalar": np.float64(3.5), "empty": np.zeros((0, 4))}
    )
    _, _, arrays = container.read_container(path)
    assert arrays["scalar"].shape == ()
    assert float(arrays["scalar"]) == 3.5
    assert arrays["empty"].shape == (0, 4)


def test_expected_kind_mismatch(tmp_path):
    path = tmp_path / "k.bin"
    container.write_container(path, "dataset", {}, {})
    with pytest.raises(DataError, match="expected 'model'"):
        container.read_container(path, expected_kind="model")


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 20)
    with pytest.raises(DataError, match="bad magic"):
        container.read_container(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "t.bin"
    container.write_container(path, "dataset", {}, {"x": np.ones(8)})
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(DataError, match="truncated"):
        container.read_container(path)


def test_truncated_header(tmp_path):
    path = tmp_path / "h.bin"
    path.write_bytes(container.MAGIC + struct.pack("<Q", 1000) + b"{}")
    with pytest.raises(DataError, match="truncated"):
        container.read_container(path)


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "x.bin"
    container.write_container(path, "dataset", {}, {"x": np.ones(2)})
    path.write_bytes(path.read_bytes() + b"junk")
    with pytest.raises(DataError, match="trailing"):
        container.read_container(path)


def test_corrupt_header_json(tmp_path):
    body = b"{not json"
    path = tmp_path / "j.bin"
    path.write_bytes(container.MAGIC + struct.pack("<Q", len(body)) + body)
    with pytest.raises(DataError, match="corrupt header"):
        container.read_container(path)


def test_wrong_schema_version(tmp_path):
    body = b'{"schema":999,"kind":"x","meta":{},"arrays":[]}'
    path = tmp_path / "v.bin"
    path.write_bytes(container.MAGIC + struct.pack("<Q", len(body)) + body)
    with pytest.raises(DataError, match="schema version"):
        container.read_container(path)


def test_unsupported_dtype_rejected(tmp_path):
    with pytest.raises(DataError, match="unsupported dtype"):
        container.write_container(
            tmp_path / "c.bin", "x", {}, {"c": np.array([1 + 2j])}
        )


def test_non_serializable_meta_rejected(tmp_path):
    with pytest.raises(DataError, match="JSON"):
        container.write_container(
            tmp_path / "m.bin", "x", {"bad": float("nan")}, {}
        )
    with pytest.raises(DataError, match="JSON"):
        container.write_container(
            tmp_path / "m2.bin", "x", {"bad": object()}, {}
        )


def test_missing_file():
    with pytest.raises(DataError, match="cannot read"):
        container.read_container("/nonexistent/thing.bin")
