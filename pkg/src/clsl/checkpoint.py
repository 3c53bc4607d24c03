"""Binary parameter checkpoints.

Layout: 8-byte little-endian unsigned header length, a UTF-8 JSON header
``{"tensors": [{"name", "shape"}, ...], ...extra}``, then every tensor's values
as little-endian float64 in header order, row-major.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .errors import DataError

MAGIC = "clsl-params"


def save_tensors(path: str | os.PathLike, tensors: dict[str, np.ndarray], extra: dict | None = None) -> None:
    header = dict(extra or {})
    header["format"] = MAGIC
    header["tensors"] = [{"name": k, "shape": list(np.shape(v))} for k, v in tensors.items()]
    blob = json.dumps(header, sort_keys=True).encode()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for v in tensors.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_tensors(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict]:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as err:
        raise DataError(f"cannot read checkpoint {path}: {err.strerror}") from None
    if len(raw) < 8:
        raise DataError(f"{path}: truncated checkpoint")
    (n,) = struct.unpack("<Q", raw[:8])
    try:
        header = json.loads(raw[8 : 8 + n])
    except (json.JSONDecodeError, UnicodeDecodeError):
        raise DataError(f"{path}: unreadable checkpoint header") from None
    if header.get("format") != MAGIC:
        raise DataError(f"{path}: not a parameter checkpoint")
    out, off = {}, 8 + n
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = off + 8 * count
        if end > len(raw):
            raise DataError(f"{path}: checkpoint body shorter than header declares")
        out[entry["name"]] = np.frombuffer(raw[off:end], dtype="<f8").reshape(shape).astype(np.float64)
        off = end
    if off != len(raw):
        raise DataError(f"{path}: trailing bytes after checkpoint body")
    return out, header
