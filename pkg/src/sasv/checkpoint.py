"""Binary parameter checkpoints.

Layout (version 1)::

    8 bytes   magic b"SASVCKPT"
    4 bytes   format version, uint32 little-endian
    4 bytes   header length N, uint32 little-endian
    N bytes   UTF-8 JSON header: {"version", "kind", "meta", "tensors": [{"name", "shape"}]}
    ...       tensor data, little-endian float32, in header order

The JSON header is written with sorted keys so equal parameters give equal
bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"SASVCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def to_bytes(state: dict, kind: str, meta: dict | None = None) -> bytes:
    tensors = []
    blobs = []
    for name, value in state.items():
        arr = value.detach().cpu().numpy() if isinstance(value, torch.Tensor) else np.asarray(value)
        tensors.append({"name": name, "shape": list(arr.shape)})
        blobs.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    header = json.dumps(
        {"version": VERSION, "kind": kind, "meta": meta or {}, "tensors": tensors},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    return MAGIC + struct.pack("<II", VERSION, len(header)) + header + b"".join(blobs)


def from_bytes(data: bytes):
    """Return (kind, meta, state) with float32 tensors."""
    if data[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file")
    version, n = struct.unpack("<II", data[8:16])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(data[16:16 + n].decode("utf-8"))
    offset = 16 + n
    state = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(entry["shape"])
        state[entry["name"]] = torch.from_numpy(arr.astype(np.float32))
        offset += 4 * count
    if offset != len(data):
        raise CheckpointError("trailing bytes after tensor data")
    return header["kind"], header["meta"], state


def save(module: torch.nn.Module, path, kind: str, meta: dict | None = None) -> bytes:
    data = to_bytes(module.state_dict(), kind, meta)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    return data


def load(path):
    return from_bytes(Path(path).read_bytes())


def digest(module: torch.nn.Module) -> str:
    return hashlib.sha256(to_bytes(module.state_dict(), "digest")).hexdigest()
