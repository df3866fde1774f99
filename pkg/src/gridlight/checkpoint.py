"""Binary checkpoint files for named float64 arrays.

Layout (all integers little-endian):

    magic   4 bytes  b"GLCK"
    version u32      currently 1
    mlen    u32      length of the manifest
    manifest         UTF-8 JSON text (arbitrary metadata, e.g. net config)
    count   u32      number of array records
    records          name_len u32, name UTF-8, rank u32, rank x u64 dims,
                     row-major float64 payload
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"GLCK"
VERSION = 1


def save_arrays(path, arrays: dict[str, np.ndarray], manifest: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mbytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(mbytes)))
        fh.write(mbytes)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            nbytes = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nbytes)))
            fh.write(nbytes)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a gridlight checkpoint")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (mlen,) = struct.unpack("<I", fh.read(4))
        manifest = json.loads(fh.read(mlen).decode("utf-8"))
        (count,) = struct.unpack("<I", fh.read(4))
        arrays: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", fh.read(4))
            name = fh.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{rank}Q", fh.read(8 * rank)) if rank else ()
            size = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * size), dtype="<f8").reshape(shape)
            arrays[name] = data.astype(np.float64)
    return arrays, manifest
