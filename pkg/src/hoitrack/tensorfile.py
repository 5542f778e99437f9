"""Bit-exact binary tensor files.

Layout: 8-byte magic "TNSR0001", little-endian u32 header length, JSON header
{"dtype": "f32"|"u8"|"i32", "shape": [...], "order": "row-major"}, then the raw
little-endian row-major payload.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CorruptTensor

MAGIC = b"TNSR0001"
_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1"), "i32": np.dtype("<i4")}
_NAMES = {np.dtype("float32"): "f32", np.dtype("uint8"): "u8", np.dtype("int32"): "i32"}


def write_tensor(path, array: np.ndarray) -> None:
    arr = np.asarray(array)
    if arr.dtype not in _NAMES:
        if np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        elif np.issubdtype(arr.dtype, np.integer) or arr.dtype == bool:
            arr = arr.astype(np.uint8)
        else:
            raise ValueError(f"unsupported dtype {arr.dtype}")
    header = json.dumps(
        {"dtype": _NAMES[arr.dtype], "shape": list(arr.shape), "order": "row-major"},
        separators=(",", ":"),
        sort_keys=True,
    ).encode("utf-8")
    payload = np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(payload)


def read_tensor(path) -> np.ndarray:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12 or data[:8] != MAGIC:
        raise CorruptTensor(f"{path}: bad magic")
    (hlen,) = struct.unpack("<I", data[8:12])
    if len(data) < 12 + hlen:
        raise CorruptTensor(f"{path}: truncated header")
    try:
        header = json.loads(data[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptTensor(f"{path}: unreadable header ({exc})") from exc
    dtype_name = header.get("dtype")
    shape = header.get("shape")
    if dtype_name not in _DTYPES or not isinstance(shape, list):
        raise CorruptTensor(f"{path}: bad header fields {header}")
    dtype = _DTYPES[dtype_name]
    expected = int(np.prod(shape)) * dtype.itemsize if shape else dtype.itemsize
    payload = data[12 + hlen :]
    if len(payload) != expected:
        raise CorruptTensor(
            f"{path}: payload {len(payload)} bytes, expected {expected}"
        )
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
