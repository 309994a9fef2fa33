"""Binary checkpoint container for named float64 parameters.

Layout (all integers little-endian)::

    b"HGCK"            magic
    u32                format version
    u32                parameter count
    per parameter:
        u32 + bytes    UTF-8 name
        u32            ndim
        u32 * ndim     extents
        f64 * prod     values, C order, little-endian
    32 bytes           SHA-256 of everything above
"""
from __future__ import annotations

import hashlib
import os
import struct
from collections import OrderedDict
from typing import Mapping

import numpy as np

MAGIC = b"HGCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(values: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(values))]
    for name, arr in values.items():
        arr = np.asarray(getattr(arr, "data", arr), dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def loads(blob: bytes) -> "OrderedDict[str, np.ndarray]":
    if len(blob) < 12 + 32:
        raise CheckpointError("checkpoint truncated: header incomplete")
    body, digest = blob[:-32], blob[-32:]
    if body[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, count = struct.unpack_from("<II", body, 4)
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version} unsupported (expected {VERSION})")
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint checksum mismatch (file corrupt or truncated)")
    pos = 12
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", body, pos)
            pos += 4
            name = body[pos:pos + n].decode("utf-8")
            pos += n
            (ndim,) = struct.unpack_from("<I", body, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}I", body, pos)
            pos += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            nbytes = 8 * size
            if pos + nbytes > len(body):
                raise CheckpointError(f"checkpoint truncated inside parameter {name!r}")
            out[name] = np.frombuffer(body, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
            pos += nbytes
    except struct.error as exc:
        raise CheckpointError(f"checkpoint truncated: {exc}") from None
    if pos != len(body):
        raise CheckpointError("checkpoint has trailing bytes")
    return out


def save_checkpoint(path, values: Mapping[str, np.ndarray]) -> None:
    blob = dumps(values)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path) -> "OrderedDict[str, np.ndarray]":
    with open(path, "rb") as fh:
        return loads(fh.read())


def assign(params: Mapping, values: Mapping[str, np.ndarray], strict: bool = True) -> list[str]:
    """Copy checkpoint values into parameter tensors; returns names that were loaded."""
    missing = [k for k in params if k not in values]
    unexpected = [k for k in values if k not in params]
    if strict and (missing or unexpected):
        raise CheckpointError(f"checkpoint/model mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
    loaded = []
    for name, tensor in params.items():
        if name not in values:
            continue
        arr = values[name]
        if arr.shape != tensor.shape:
            raise CheckpointError(f"shape mismatch for {name}: checkpoint {arr.shape} vs model {tensor.shape}")
        tensor.data[...] = arr
        loaded.append(name)
    return loaded
