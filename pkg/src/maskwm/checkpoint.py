"""Self-describing binary checkpoints for bit-exact resume.

Layout: 4-byte magic, u32 format version, u64 header length, JSON header,
then raw little-endian array bytes back to back.  The header records the
config snapshot, the step counter, rng stream states, environment and loop
state, and dtype/shape/offset for every named array (model parameters,
optimizer moments, replay contents).  Writes go to a temp file renamed into
place so a crash never leaves a truncated checkpoint behind.
"""
from __future__ import annotations

import json
import os
import struct

import numpy as np

MAGIC = b"MWM1"
VERSION = 1


def _le(arr: np.ndarray) -> np.ndarray:
    # ascontiguousarray would promote 0-d arrays to shape (1,)
    if not arr.flags.c_contiguous:
        arr = np.ascontiguousarray(arr)
    if arr.dtype.byteorder == ">":
        arr = arr.astype(arr.dtype.newbyteorder("<"))
    return arr


def save_checkpoint(path: str, meta: dict, arrays: dict) -> None:
    """meta must be JSON-serialisable; arrays maps name -> ndarray."""
    entries = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = _le(np.asarray(arrays[name]))
        blob = arr.tobytes()
        entries.append({
            "name": name,
            "dtype": arr.dtype.str,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(blob),
        })
        blobs.append(blob)
        offset += len(blob)
    header = {"meta": meta, "arrays": entries}
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        for blob in blobs:
            f.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path: str):
    """Returns (meta, arrays); rejects wrong magic or version loudly."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, not a checkpoint file")
        (version,) = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (header_len,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(header_len).decode("utf-8"))
        body = f.read()
    arrays = {}
    for entry in header["arrays"]:
        raw = body[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        arrays[entry["name"]] = arr.copy()
    return header["meta"], arrays
