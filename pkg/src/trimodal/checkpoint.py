"""Named-array checkpoint files.

Layout: an 8-byte little-endian uint64 header length, a UTF-8 JSON header
(version, dtype, array names + shapes, free-form extra), then the raw
little-endian array bytes concatenated in header order. Loading validates
the magic version and byte counts, so truncated or corrupted files fail
loudly instead of half-loading.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

from .errors import ValidationError

FORMAT_VERSION = 1
_LEN = struct.Struct("<Q")


def save_arrays(path: str | Path, arrays: Dict[str, np.ndarray], extra: dict | None = None) -> None:
    names = sorted(arrays)
    if not names:
        raise ValidationError("refusing to write an empty checkpoint")
    dtype = np.dtype(arrays[names[0]].dtype)
    if dtype not in (np.float32, np.float64):
        raise ValidationError(f"unsupported checkpoint dtype {dtype}")
    header = {
        "version": FORMAT_VERSION,
        "dtype": dtype.newbyteorder("<").str,
        "arrays": [{"name": n, "shape": list(arrays[n].shape)} for n in names],
        "extra": extra or {},
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_LEN.pack(len(blob)))
        f.write(blob)
        for n in names:
            a = np.ascontiguousarray(arrays[n], dtype=dtype)
            f.write(a.astype(dtype.newbyteorder("<"), copy=False).tobytes())


def load_arrays(path: str | Path) -> Tuple[Dict[str, np.ndarray], dict]:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"checkpoint not found: {p}")
    raw = p.read_bytes()
    if len(raw) < _LEN.size:
        raise ValidationError(f"{p}: corrupt checkpoint (missing header length)")
    (hlen,) = _LEN.unpack_from(raw, 0)
    if hlen <= 0 or _LEN.size + hlen > len(raw):
        raise ValidationError(f"{p}: corrupt checkpoint (header length {hlen} exceeds file)")
    try:
        header = json.loads(raw[_LEN.size : _LEN.size + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ValidationError(f"{p}: corrupt checkpoint header: {e}") from e
    if header.get("version") != FORMAT_VERSION:
        raise ValidationError(f"{p}: unsupported checkpoint version {header.get('version')}")
    dtype = np.dtype(header["dtype"])
    offset = _LEN.size + hlen
    arrays: Dict[str, np.ndarray] = {}
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        nbytes = int(np.prod(shape)) * dtype.itemsize if shape else dtype.itemsize
        count = int(np.prod(shape)) if shape else 1
        if offset + nbytes > len(raw):
            raise ValidationError(f"{p}: truncated checkpoint at array {spec['name']}")
        arrays[spec["name"]] = np.frombuffer(
            raw, dtype=dtype, count=count, offset=offset
        ).reshape(shape).astype(dtype.newbyteorder("="))
        offset += nbytes
    if offset != len(raw):
        raise ValidationError(f"{p}: trailing bytes after last array")
    return arrays, header.get("extra", {})
