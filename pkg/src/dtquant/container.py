"""Named-tensor binary container, the on-disk weight format.

Layout (little-endian):

    u64    header length in bytes
    bytes  UTF-8 JSON header: {name: {"dtype": "f64"|"f32",
                                      "shape": [...],
                                      "offset": int,   # into the data section
                                      "nbytes": int}}
    bytes  concatenated raw row-major buffers

Matrices are stored in [output, input] orientation. Writing is deterministic:
names are sorted and buffers laid out in that order, so identical tensors
produce byte-identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

_DTYPES = {"f64": np.float64, "f32": np.float32}


def write_container(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    header: dict[str, dict] = {}
    buffers: list[bytes] = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        if arr.dtype == np.float64:
            dtype = "f64"
        elif arr.dtype == np.float32:
            dtype = "f32"
        else:
            raise DataError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        raw = arr.tobytes()
        header[name] = {"dtype": dtype, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)}
        buffers.append(raw)
        offset += len(raw)
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for raw in buffers:
            fh.write(raw)


def read_container(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"container file not found: {path}")
    with open(path, "rb") as fh:
        head = fh.read(8)
        if len(head) != 8:
            raise DataError(f"truncated container: {path}")
        (header_len,) = struct.unpack("<Q", head)
        header_bytes = fh.read(header_len)
        if len(header_bytes) != header_len:
            raise DataError(f"truncated container header: {path}")
        try:
            header = json.loads(header_bytes.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataError(f"malformed container header: {exc}") from exc
        data = fh.read()
    out: dict[str, np.ndarray] = {}
    for name, entry in header.items():
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise DataError(f"unknown dtype {entry['dtype']!r} for tensor {name!r}")
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(data):
            raise DataError(f"tensor {name!r} extends past end of container")
        arr = np.frombuffer(data[start:start + nbytes], dtype=dtype).reshape(entry["shape"])
        out[name] = arr.copy()
    return out
