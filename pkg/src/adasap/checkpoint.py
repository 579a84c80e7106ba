"""Single-file checkpoint format: JSON manifest plus raw little-endian blobs.

Layout:  magic ``ADSP`` | u32 version | u64 manifest length | manifest JSON
(utf-8) | concatenated value blobs.  The manifest lists every tensor's name,
shape, dtype and byte offset (relative to the blob section) and carries an
arbitrary ``meta`` dict.  Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"ADSP"
VERSION = 1

_DTYPES = {
    "float64": "<f8",
    "float32": "<f4",
    "int64": "<i8",
    "uint8": "|u1",
}


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dtype_name = arr.dtype.name
        if dtype_name not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {dtype_name} for tensor {name!r}")
        raw = np.ascontiguousarray(arr).astype(_DTYPES[dtype_name], copy=False).tobytes()
        entries.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": dtype_name,
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)
    manifest = json.dumps({"tensors": entries, "meta": meta or {}}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(manifest)))
        f.write(manifest)
        for raw in blobs:
            f.write(raw)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack("<I", data[4:8])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (mlen,) = struct.unpack("<Q", data[8:16])
    manifest = json.loads(data[16 : 16 + mlen].decode("utf-8"))
    blob_start = 16 + mlen
    tensors: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        start = blob_start + entry["offset"]
        raw = data[start : start + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=_DTYPES[entry["dtype"]]).reshape(entry["shape"])
        tensors[entry["name"]] = arr.astype(entry["dtype"], copy=True)
    return tensors, manifest.get("meta", {})
