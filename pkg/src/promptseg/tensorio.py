"""Binary tensor I/O.

Two formats live here:

* a bare tensor file: little-endian u32 rank, u32 dims, then raw float32
  values in row-major order;
* a keyed tensor archive used for weight files and checkpoints: a JSON
  metadata block followed by named tensors, each stored with the bare
  layout above. Entries are written in sorted key order so identical
  content yields identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

ARCHIVE_MAGIC = b"PSTA"
ARCHIVE_VERSION = 1


def write_tensor_file(path, array) -> None:
    arr = np.ascontiguousarray(array, dtype=np.float32)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def read_tensor_file(path) -> np.ndarray:
    with open(path, "rb") as fh:
        (rank,) = struct.unpack("<I", fh.read(4))
        dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
        count = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(fh.read(4 * count), dtype="<f4")
        if data.size != count:
            raise ValueError(f"{path}: truncated tensor file")
    return data.reshape(dims).astype(np.float32)


def write_archive(path, tensors: dict, meta: dict | None = None) -> None:
    """Write named float32 tensors plus a JSON metadata block."""
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(ARCHIVE_MAGIC)
        fh.write(struct.pack("<I", ARCHIVE_VERSION))
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype=np.float32)
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def read_archive(path):
    """Return (tensors: dict[str, np.ndarray], meta: dict)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"weight file not found: {path}")
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != ARCHIVE_MAGIC:
            raise ValueError(f"{path}: not a tensor archive (bad magic {magic!r})")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != ARCHIVE_VERSION:
            raise ValueError(f"{path}: unsupported archive version {version}")
        (meta_len,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(meta_len).decode("utf-8")) if meta_len else {}
        (count,) = struct.unpack("<I", fh.read(4))
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
            n = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(fh.read(4 * n), dtype="<f4")
            if data.size != n:
                raise ValueError(f"{path}: truncated entry {name!r}")
            tensors[name] = data.reshape(dims).astype(np.float32)
    return tensors, meta
