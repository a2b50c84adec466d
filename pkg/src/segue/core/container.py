"""Versioned binary container: magic, header length, JSON header, raw tensor blob.

Used for generator checkpoints and perturbation sets. The header lists every tensor
(name, dtype, shape, offset) and the SHA-256 of the blob, so truncation or tampering
is detected before anything is deserialized.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np
import torch

from segue.errors import CheckpointError, IncompatibleCheckpointError

MAGIC = b"SEGUEBIN"
_LEN = struct.Struct("<Q")


def write_container(path, kind: str, format_version: int, tensors: dict, header: dict) -> str:
    """Write atomically and return the blob digest (stable across re-runs)."""
    chunks, entries, offset = [], [], 0
    for name, t in tensors.items():
        arr = t.detach().cpu().contiguous().numpy()
        raw = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        entries.append({"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    digest = hashlib.sha256(blob).hexdigest()
    full = dict(header)
    full.update(kind=kind, format_version=format_version, tensors=entries, blob_sha256=digest)
    head = json.dumps(full, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(_LEN.pack(len(head)))
            fh.write(head)
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return digest


def read_container(path, kind: str, format_version: int):
    """Return (header, tensors). Raises CheckpointError on any corruption."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from exc
    if len(data) < len(MAGIC) + _LEN.size or data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a segue container (bad magic or truncated)")
    (hlen,) = _LEN.unpack_from(data, len(MAGIC))
    start = len(MAGIC) + _LEN.size
    if start + hlen > len(data):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(data[start:start + hlen])
    except ValueError as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    if header.get("kind") != kind:
        raise IncompatibleCheckpointError(f"{path}: expected a {kind!r} container, found {header.get('kind')!r}")
    if header.get("format_version") != format_version:
        raise IncompatibleCheckpointError(
            f"{path}: format_version {header.get('format_version')} is not supported (expected {format_version})"
        )
    blob = data[start + hlen:]
    if hashlib.sha256(blob).hexdigest() != header["blob_sha256"]:
        raise CheckpointError(f"{path}: parameter blob is truncated or corrupt")
    tensors = {}
    for e in header["tensors"]:
        raw = blob[e["offset"]: e["offset"] + e["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(e["dtype"]).newbyteorder("<")).reshape(e["shape"])
        tensors[e["name"]] = torch.from_numpy(arr.copy())
    return header, tensors
