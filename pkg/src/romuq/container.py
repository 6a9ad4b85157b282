"""Self-describing binary container for pipeline artifacts.

Layout::

    8 bytes   magic  b"ROMUQBIN"
    8 bytes   little-endian uint64, byte length of the JSON header
    N bytes   UTF-8 JSON header
    payload   raw array blocks, concatenated in header order

The header carries ``schema`` (format version), ``kind`` (artifact type),
a free-form ``meta`` mapping, and an ``arrays`` list of
``{"name", "dtype", "shape"}`` descriptors.  Arrays are stored row-major
little-endian, float64 or int64 only.  The header is serialized with sorted
keys and no whitespace, and nothing time- or host-dependent is ever written,
so identical inputs produce byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

__all__ = ["write_container", "read_container", "file_sha256", "SCHEMA_VERSION"]

MAGIC = b"ROMUQBIN"
SCHEMA_VERSION = 1
_DTYPES = {"<f8": np.dtype("<f8"), "<i8": np.dtype("<i8")}


def _canonical_json(obj) -> bytes:
    try:
        return json.dumps(
            obj, sort_keys=True, separators=(",", ":"), allow_nan=False
        ).encode("utf-8")
    except (TypeError, ValueError) as exc:
        raise DataError(f"header is not JSON-serializable: {exc}") from exc


def write_container(path, kind: str, meta: dict, arrays: dict) -> str:
    """Write an artifact container and return its SHA-256 hex digest.

    Parameters
    ----------
    path : path-like
        Destination file, overwritten if present.
    kind : str
        Artifact type tag, e.g. ``"dataset"``, ``"model"``, ``"calibration"``.
    meta : dict
        JSON-serializable metadata (finite numbers, strings, lists, dicts).
    arrays : dict[str, ndarray]
        Named numeric blocks; float arrays are stored as little-endian
        float64, integer arrays as little-endian int64.  Insertion order is
        preserved in the file.
    """
    descriptors = []
    blobs = []
    for name, value in arrays.items():
        arr = np.asarray(value)
        shape = arr.shape  # before ascontiguousarray, which promotes 0-d to 1-d
        if arr.dtype.kind == "f":
            arr = np.ascontiguousarray(arr, dtype="<f8")
            tag = "<f8"
        elif arr.dtype.kind in "iub":
            arr = np.ascontiguousarray(arr, dtype="<i8")
            tag = "<i8"
        else:
            raise DataError(
                f"array {name!r} has unsupported dtype {arr.dtype}"
            )
        descriptors.append(
            {"name": name, "dtype": tag, "shape": list(shape)}
        )
        blobs.append(arr.tobytes())
    header = _canonical_json(
        {
            "schema": SCHEMA_VERSION,
            "kind": kind,
            "meta": meta,
            "arrays": descriptors,
        }
    )
    digest = hashlib.sha256()
    with open(path, "wb") as fh:
        for chunk in (MAGIC, struct.pack("<Q", len(header)), header, *blobs):
            fh.write(chunk)
            digest.update(chunk)
    return digest.hexdigest()


def read_container(path, expected_kind: str | None = None):
    """Read an artifact container.

    Parameters
    ----------
    path : path-like
    expected_kind : str, optional
        When given, a mismatching ``kind`` raises :class:`DataError`.

    Returns
    -------
    kind : str
    meta : dict
    arrays : dict[str, ndarray]
        Arrays are writable copies owned by the caller.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if len(raw) < 16 or raw[:8] != MAGIC:
        raise DataError(f"{path} is not a romuq container (bad magic)")
    (header_len,) = struct.unpack("<Q", raw[8:16])
    if 16 + header_len > len(raw):
        raise DataError(f"{path} is truncated (header)")
    try:
        header = json.loads(raw[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path} has a corrupt header: {exc}") from exc
    schema = header.get("schema")
    if schema != SCHEMA_VERSION:
        raise DataError(
            f"{path} uses schema version {schema!r}; this build reads {SCHEMA_VERSION}"
        )
    kind = header.get("kind")
    if expected_kind is not None and kind != expected_kind:
        raise DataError(
            f"{path} holds a {kind!r} artifact, expected {expected_kind!r}"
        )
    offset = 16 + header_len
    arrays = {}
    for desc in header.get("arrays", []):
        try:
            name = desc["name"]
            dtype = _DTYPES[desc["dtype"]]
            shape = tuple(int(s) for s in desc["shape"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path} has a malformed array descriptor: {exc}") from exc
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(raw):
            raise DataError(f"{path} is truncated (array {name!r})")
        arrays[name] = (
            np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
            .reshape(shape)
            .copy()
        )
        offset += nbytes
    if offset != len(raw):
        raise DataError(
            f"{path} has {len(raw) - offset} trailing bytes beyond the declared payload"
        )
    return kind, header.get("meta", {}), arrays


def file_sha256(path) -> str:
    """SHA-256 hex digest of a file's bytes."""
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
