"""Versioned binary container for trained models.

Layout: 8-byte magic, little-endian uint32 format version, uint64 header
length, a UTF-8 JSON header with sorted keys, then the raw little-endian
array buffers in header order. Nothing time-dependent is written, so the
same model always serializes to the same bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np

from .base import REGISTRY, Model, ModelError

MAGIC = b"SHTLETA\x00"
FORMAT_VERSION = 1

_DTYPES = {"f8": np.dtype("<f8"), "i8": np.dtype("<i8"), "b1": np.dtype("|b1")}


def _code(a: np.ndarray) -> str:
    if a.dtype.kind == "f":
        return "f8"
    if a.dtype.kind in "iu":
        return "i8"
    if a.dtype.kind == "b":
        return "b1"
    raise ModelError(f"cannot persist arrays of dtype {a.dtype}")


def dumps(model: Model) -> bytes:
    if not model.fitted:
        raise ModelError("cannot save an untrained model")
    arrays = model.arrays()
    entries = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        a = np.asarray(arrays[name])
        code = _code(a)
        buf = np.ascontiguousarray(a, dtype=_DTYPES[code]).tobytes()
        entries.append({"name": name, "dtype": code, "shape": list(a.shape), "offset": offset, "nbytes": len(buf)})
        blobs.append(buf)
        offset += len(buf)
    header = {"format_version": FORMAT_VERSION, "meta": model.meta(), "arrays": entries}
    text = json.dumps(header, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")
    return MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(text)) + text + b"".join(blobs)


def loads(data: bytes) -> Model:
    header, arrays = read_container(data)
    meta = header["meta"]
    kind = meta.get("kind")
    if kind not in REGISTRY:
        raise ModelError(f"model file holds unknown kind {kind!r}")
    return REGISTRY[kind].from_state(meta, arrays)


def read_container(data: bytes) -> Tuple[dict, Dict[str, np.ndarray]]:
    if data[: len(MAGIC)] != MAGIC:
        raise ModelError("not a model file (bad magic bytes)")
    pos = len(MAGIC)
    if len(data) < pos + struct.calcsize("<IQ"):
        raise ModelError("model file truncated in the header")
    version, hlen = struct.unpack_from("<IQ", data, pos)
    if version != FORMAT_VERSION:
        raise ModelError(f"model file format version {version}; this build reads version {FORMAT_VERSION}")
    pos += struct.calcsize("<IQ")
    try:
        header = json.loads(data[pos : pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelError(f"model file header is unreadable ({exc})") from exc
    base = pos + hlen
    arrays = {}
    for e in header["arrays"]:
        start = base + e["offset"]
        raw = data[start : start + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise ModelError(f"model file truncated in array {e['name']}")
        dt = _DTYPES[e["dtype"]]
        a = np.frombuffer(raw, dtype=dt).reshape(e["shape"]).astype(dt.newbyteorder("="), copy=True)
        if e["dtype"] == "i8":
            a = a.astype(np.int64)
        arrays[e["name"]] = a
    return header, arrays


def save(model: Model, path: Union[str, Path]) -> None:
    Path(path).write_bytes(dumps(model))


def load(path: Union[str, Path]) -> Model:
    return loads(Path(path).read_bytes())
