"""Binary checkpoints for named float64 tensors.

Layout (little-endian)::

    b"SUNGCK1\\0"
    u32 count
    repeat count times:
        u32 name length, UTF-8 name
        u32 rank, rank * u64 dims
        prod(dims) * f64 payload
"""
from __future__ import annotations

import math
import struct

import numpy as np

MAGIC = b"SUNGCK1\0"


class CheckpointError(ValueError):
    pass


def save_tensors(path, tensors: dict) -> None:
    parts = [MAGIC, struct.pack("<I", len(tensors))]
    for name, value in tensors.items():
        arr = np.ascontiguousarray(value, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_tensors(path) -> dict:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise CheckpointError("bad magic")
    pos = 8

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError("truncated checkpoint")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    out = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank))
        n = math.prod(dims)
        arr = np.frombuffer(take(8 * n), dtype="<f8").astype(np.float64).reshape(dims)
        out[name] = arr
    if pos != len(data):
        raise CheckpointError("trailing bytes after last tensor")
    return out


def save_trees(path, trees: dict) -> None:
    """Save several ParamTrees, prefixing parameter names with ``<key>/``."""
    tensors = {}
    for key, tree in trees.items():
        for name, value in tree.values.items():
            tensors[f"{key}/{name}"] = value
    save_tensors(path, tensors)


def load_trees(path, trees: dict) -> None:
    tensors = load_tensors(path)
    expected = {f"{k}/{n}" for k, t in trees.items() for n in t.names()}
    missing = expected - set(tensors)
    if missing:
        raise CheckpointError(f"checkpoint is missing {sorted(missing)[:3]}")
    extra = set(tensors) - expected
    if extra:
        raise CheckpointError(f"checkpoint has unexpected tensors {sorted(extra)[:3]}")
    for key, tree in trees.items():
        try:
            tree.load_state_dict(tensors, prefix=f"{key}/")
        except ValueError as exc:
            raise CheckpointError(str(exc)) from None
