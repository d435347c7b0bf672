"""Versioned binary checkpoint container.

Layout::

    8 bytes   magic  b"WSEGCKPT"
    uint32    format version (little-endian)
    uint32    manifest length in bytes
    ...       manifest, UTF-8 JSON: {"tensors": [{"name", "shape"}...], "meta": {...}}
    ...       float32 little-endian blobs, concatenated in manifest order
"""
from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

MAGIC = b"WSEGCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict | None = None):
    """Write atomically: temp file in the target directory, then rename."""
    manifest = {
        "tensors": [{"name": k, "shape": list(np.shape(v))} for k, v in tensors.items()],
        "meta": meta or {},
    }
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<II", VERSION, len(head)))
            fh.write(head)
            for v in tensors.values():
                fh.write(np.ascontiguousarray(v, dtype="<f4").tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, n = struct.unpack_from("<II", blob, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    manifest = json.loads(blob[16:16 + n].decode())
    offset = 16 + n
    tensors = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        tensors[entry["name"]] = arr.reshape(shape).astype(np.float32)
        offset += 4 * count
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes")
    return tensors, manifest["meta"]
