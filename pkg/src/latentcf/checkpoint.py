"""Binary checkpoint container.

Layout (all integers little-endian)::

    magic        8 bytes   b"LATCFCK\\0"
    version      uint32    FORMAT_VERSION
    header_len   uint32
    header       header_len bytes of UTF-8 JSON (schema hash, sizes, seed, ...)
    n_blocks     uint32
    n_blocks x:
        name_len uint16, name (UTF-8)
        ndim     uint8,  ndim x uint64 dims
        payload  prod(dims) x float64 (little-endian, C order)

Block names are namespaced by section, e.g. ``vae/tok.W_num`` or
``classifier/W0``.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"LATCFCK\0"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def write_checkpoint(path, header: dict, blocks: dict[str, np.ndarray]) -> None:
    hdr = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(hdr)), hdr, struct.pack("<I", len(blocks))]
    for name in sorted(blocks):
        arr = np.array(blocks[name], dtype="<f8", order="C")  # keeps 0-d shapes
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    Path(path).write_bytes(b"".join(parts))


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    try:
        return _parse(path, data)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint ({exc})") from exc


def _parse(path, data: bytes):
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    off = 16
    header = json.loads(data[off:off + hlen].decode("utf-8"))
    off += hlen
    (n_blocks,) = struct.unpack_from("<I", data, off)
    off += 4
    blocks = {}
    for _ in range(n_blocks):
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}Q", data, off)
        off += 8 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape).astype(np.float64)
        off += 8 * count
        blocks[name] = arr
    if off != len(data):
        raise CheckpointError(f"{path}: {len(data) - off} trailing bytes")
    return header, blocks


def load_into(params: dict, blocks: dict[str, np.ndarray], prefix: str) -> None:
    """Copy ``prefix + name`` blocks into the matching parameter tensors."""
    for name, tensor in params.items():
        key = prefix + name
        if key not in blocks:
            raise CheckpointError(f"checkpoint missing block {key!r}")
        arr = blocks[key]
        if arr.shape != tensor.values.shape:
            raise CheckpointError(f"block {key!r} has shape {arr.shape}, expected {tensor.values.shape}")
        tensor.values = arr.copy()
