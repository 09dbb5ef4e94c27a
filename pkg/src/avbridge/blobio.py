"""Raw little-endian tensor blobs with JSON-manifest metadata.

One blob file holds named arrays back to back; the manifest entry for each
records shape, dtype and byte offset. Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import os

import numpy as np

_DT = {"f32": "<f4", "f64": "<f8"}
_DT_NAMES = {np.dtype("<f4"): "f32", np.dtype("<f8"): "f64"}


def write_blob(path: str, arrays: dict[str, np.ndarray]) -> dict[str, dict]:
    """Write arrays in iteration order; returns manifest entries."""
    entries: dict[str, dict] = {}
    offset = 0
    with open(path, "wb") as f:
        for name, arr in arrays.items():
            dt = np.dtype("<f8") if arr.dtype == np.float64 else np.dtype("<f4")
            raw = np.ascontiguousarray(arr, dtype=dt).tobytes()
            entries[name] = {
                "shape": list(arr.shape),
                "dtype": _DT_NAMES[dt],
                "byte_offset": offset,
                "byte_length": len(raw),
            }
            f.write(raw)
            offset += len(raw)
    return entries


def read_blob(path: str, entries: dict[str, dict]) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        data = f.read()
    for name, e in entries.items():
        dt = np.dtype(_DT[e["dtype"]])
        start = e["byte_offset"]
        raw = data[start:start + e["byte_length"]]
        out[name] = np.frombuffer(raw, dtype=dt).reshape(e["shape"]).copy()
    return out


def write_json(path: str, obj) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp, path)


def read_json(path: str):
    with open(path) as f:
        return json.load(f)
