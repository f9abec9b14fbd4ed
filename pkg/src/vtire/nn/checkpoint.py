"""Checkpoint files: a JSON header describing named tensors, then raw data.

Layout (all integers little-endian)::

    bytes 0-3    magic b"VTCK"
    bytes 4-7    uint32 format version (currently 1)
    bytes 8-11   uint32 header length L in bytes
    bytes 12..   UTF-8 JSON header of length L:
                   {"version": 1, "meta": {...},
                    "tensors": [{"name": str, "shape": [..], "offset": int}, ...]}
    then         concatenated float32 little-endian payloads; ``offset`` is
                 counted in bytes from the start of the payload section

Tensors are stored in the order the model enumerates its parameters.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"VTCK"
VERSION = 1


def save_checkpoint(path, tensors, meta=None):
    entries, blobs, offset = [], [], 0
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        entries.append({"name": name, "shape": list(data.shape), "offset": offset})
        blobs.append(data.tobytes())
        offset += data.nbytes
    header = json.dumps({"version": VERSION, "meta": meta or {}, "tensors": entries},
                        sort_keys=True).encode("utf-8")
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)
    return path


def load_checkpoint(path):
    """Return ``(tensors, meta)`` with tensors as float32 arrays."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    payload = memoryview(raw)[12 + hlen:]
    tensors = {}
    for e in header["tensors"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=e["offset"])
        tensors[e["name"]] = arr.reshape(e["shape"]).astype(np.float32)
    return tensors, header.get("meta", {})
