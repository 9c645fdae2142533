"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    magic     8 bytes   b"GCKPT\\x00\\x00\\x01"
    version   uint32    currently 1
    count     uint32    number of entries
    entry*    name_len uint32, name utf-8 bytes,
              ndim uint32, extents uint64 * ndim,
              payload float64 little-endian, row-major, prod(extents) values

Entries are written in sorted-name order so equal parameter dicts give equal bytes.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import FormatError
from .tensor import Tensor

MAGIC = b"GCKPT\x00\x00\x01"
VERSION = 1


def dumps(params: Mapping[str, "np.ndarray | Tensor"]) -> bytes:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name in sorted(params):
        value = params[name]
        arr = np.ascontiguousarray(value.data if isinstance(value, Tensor) else value, dtype="<f8")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    return b"".join(chunks)


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:8] != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    version, count = struct.unpack_from("<II", blob, 8)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    pos = 16
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + n].decode("utf-8")
            pos += n
            (ndim,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}Q", blob, pos)
            pos += 8 * ndim
            size = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(shape)
            pos += 8 * size
            out[name] = arr.astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise FormatError(f"truncated checkpoint: {exc}") from None
    if pos != len(blob):
        raise FormatError("trailing bytes after last checkpoint entry")
    return out


def save_checkpoint(path, params: Mapping[str, "np.ndarray | Tensor"]) -> None:
    Path(path).write_bytes(dumps(params))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
