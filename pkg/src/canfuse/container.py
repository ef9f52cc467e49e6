"""Versioned little-endian binary container for named numpy arrays.

Every on-disk artifact of the pipeline (frame tables, predictor weights,
tree models, splits) uses this one format: an 8-byte magic, a format
version, an optional JSON metadata blob, and a sequence of named arrays
stored in C order with explicit little-endian dtypes. Round-trips are
bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CanfuseError

_HEADER = struct.Struct("<8sIII")  # magic, version, n_arrays, meta_len

_ALLOWED_DTYPES = {"<f8", "<f4", "<i8", "<i4", "<u4", "<u2", "|u1", "|b1"}


class ContainerError(CanfuseError):
    """Corrupt or mismatched container file."""


def _canonical(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    if out.dtype.byteorder == ">":
        out = out.astype(out.dtype.newbyteorder("<"))
    if out.dtype.str not in _ALLOWED_DTYPES:
        raise ContainerError(f"unsupported dtype {out.dtype.str}")
    return out


def write_container(
    path: str | Path,
    magic: bytes,
    arrays: dict[str, np.ndarray],
    meta: dict | None = None,
    version: int = 1,
) -> None:
    if len(magic) != 8:
        raise ContainerError("magic must be exactly 8 bytes")
    meta_blob = json.dumps(meta, sort_keys=True).encode() if meta is not None else b""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(magic, version, len(arrays), len(meta_blob)))
        fh.write(meta_blob)
        for name, arr in arrays.items():
            arr = _canonical(arr)
            name_b = name.encode()
            dtype_b = arr.dtype.str.encode()
            fh.write(struct.pack("<H", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<H", len(dtype_b)))
            fh.write(dtype_b)
            fh.write(struct.pack("<H", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def read_container(
    path: str | Path, magic: bytes
) -> tuple[int, dict[str, np.ndarray], dict]:
    """Return (version, arrays, meta). Raises ContainerError on mismatch."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ContainerError(f"{path}: truncated header")
        got_magic, version, n_arrays, meta_len = _HEADER.unpack(head)
        if got_magic != magic:
            raise ContainerError(
                f"{path}: wrong magic {got_magic!r}, expected {magic!r}"
            )
        meta = json.loads(fh.read(meta_len).decode()) if meta_len else {}
        arrays: dict[str, np.ndarray] = {}
        for _ in range(n_arrays):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode()
            (dtype_len,) = struct.unpack("<H", fh.read(2))
            dtype = np.dtype(fh.read(dtype_len).decode())
            (ndim,) = struct.unpack("<H", fh.read(2))
            shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim)) if ndim else ()
            count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            raw = fh.read(count * dtype.itemsize)
            if len(raw) != count * dtype.itemsize:
                raise ContainerError(f"{path}: truncated array {name!r}")
            arrays[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    return version, arrays, meta
