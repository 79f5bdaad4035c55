"""Parameter checkpoints.

Layout: the magic bytes ``SSCK``, an unsigned little-endian 64-bit header
length, a UTF-8 JSON header and then every array as little-endian float64 in
header order.  The header reads::

    {"dtype": "<f8", "tensors": [{"name": "conv1.kernel", "shape": [32, 1, 7, 7]}, ...],
     "meta": {...}}
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from .errors import DataError

MAGIC = b"SSCK"


def save_checkpoint(path, arrays: Mapping[str, np.ndarray], meta: Optional[dict] = None) -> None:
    header = {
        "dtype": "<f8",
        "tensors": [{"name": name, "shape": list(np.shape(a))} for name, a in arrays.items()],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> Tuple[Dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    (length,) = struct.unpack("<Q", raw[4:12])
    header = json.loads(raw[12:12 + length].decode("utf-8"))
    if header.get("dtype") != "<f8":
        raise DataError(f"{path}: unsupported dtype {header.get('dtype')!r}")
    offset = 12 + length
    arrays = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        chunk = raw[offset:offset + 8 * count]
        if len(chunk) != 8 * count:
            raise DataError(f"{path}: truncated payload for {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(entry["shape"]).astype(np.float64)
        offset += 8 * count
    if offset != len(raw):
        raise DataError(f"{path}: trailing bytes after payload")
    return arrays, header.get("meta", {})
