"""Flat binary container: one JSON meta line, then raw little-endian arrays.

Used for imagined-trajectory dumps and recorded-episode files.  The header
carries dtype, shape, and byte offsets for every array, so files are
readable without this package given the format note in the README.
"""
from __future__ import annotations

import json

import numpy as np


def _le_dtype(arr: np.ndarray) -> np.dtype:
    dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
    return dt


def write_arrays(path: str, meta: dict, arrays: dict) -> None:
    entries = []
    offset = 0
    blobs = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        arr = arr.astype(_le_dtype(arr), copy=False)
        blob = arr.tobytes()
        entries.append({
            "name": name,
            "dtype": arr.dtype.str,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(blob),
        })
        offset += len(blob)
        blobs.append(blob)
    header = dict(meta)
    header["arrays"] = entries
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for blob in blobs:
            f.write(blob)


def read_arrays(path: str):
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        body = f.read()
    arrays = {}
    for entry in header.pop("arrays"):
        raw = body[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"]))
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return header, arrays
