"""Versioned binary checkpoints.

Layout: magic ``b"T2D1"``, little-endian uint32 version, uint32 manifest
length, a JSON manifest, then the raw little-endian float32 payload. The
manifest lists every tensor as ``{"name", "shape", "offset"}`` (offset in
bytes from the payload start) and carries free-form metadata.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from ..errors import ValidationError

MAGIC = b"T2D1"
VERSION = 1


def save_checkpoint(path: str, tensors: dict, meta: dict | None = None):
    entries = []
    chunks = []
    offset = 0
    for name, value in tensors.items():
        arr = np.ascontiguousarray(np.asarray(value, dtype="<f4"))
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    manifest = json.dumps({"tensors": entries, "meta": meta or {}}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(manifest)))
        fh.write(manifest)
        for c in chunks:
            fh.write(c)


def load_checkpoint(path: str) -> tuple[dict, dict]:
    """Return ``(tensors, meta)``; tensors are float32 numpy arrays."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise ValidationError(f"cannot read checkpoint {path}: {exc}") from exc
    if data[:4] != MAGIC:
        raise ValidationError(f"{path}: bad checkpoint magic {data[:4]!r}")
    if len(data) < 12:
        raise ValidationError(f"{path}: truncated checkpoint header")
    version, mlen = struct.unpack("<II", data[4:12])
    if version != VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {version}")
    try:
        manifest = json.loads(data[12 : 12 + mlen])
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: corrupt manifest") from exc
    payload = memoryview(data)[12 + mlen :]
    tensors = {}
    for e in manifest["tensors"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        end = e["offset"] + 4 * count
        if end > len(payload):
            raise ValidationError(f"{path}: payload too short for {e['name']}")
        arr = np.frombuffer(payload[e["offset"] : end], dtype="<f4").reshape(e["shape"])
        tensors[e["name"]] = arr.astype(np.float32)
    return tensors, manifest.get("meta", {})


def state_arrays(module) -> dict:
    return {k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def checksum(module) -> str:
    """Digest of every parameter and buffer of ``module``."""
    h = hashlib.sha256()
    for k, v in sorted(module.state_dict().items()):
        h.update(k.encode())
        h.update(np.ascontiguousarray(v.detach().cpu().numpy()).tobytes())
    return h.hexdigest()
