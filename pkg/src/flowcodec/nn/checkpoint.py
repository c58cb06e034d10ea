"""Binary checkpoint container.

Layout (all integers little-endian):

    magic   4 bytes  b"FCKP"
    version u8       (currently 1)
    n_meta  u16      metadata entries: key_len u16, key utf-8, val_len u16, val utf-8
    n_param u32      parameter entries, each:
        name_len u16, name utf-8
        ndim     u8,  dims u32 * ndim
        data     float32 little-endian, C order

The byte stream is platform-independent; the first 8 bytes of its SHA-256
serve as the checkpoint identity carried in bitstream headers.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

MAGIC = b"FCKP"
VERSION = 1


class CheckpointError(ValueError):
    pass


def serialize(named_params: dict[str, np.ndarray], metadata: dict[str, str] | None = None) -> bytes:
    metadata = metadata or {}
    out = bytearray()
    out += MAGIC
    out += struct.pack("<B", VERSION)
    out += struct.pack("<H", len(metadata))
    for key, val in metadata.items():
        kb, vb = key.encode(), str(val).encode()
        out += struct.pack("<H", len(kb)) + kb + struct.pack("<H", len(vb)) + vb
    out += struct.pack("<I", len(named_params))
    for name, arr in named_params.items():
        nb = name.encode()
        arr = np.ascontiguousarray(arr, dtype="<f4")
        out += struct.pack("<H", len(nb)) + nb
        out += struct.pack("<B", arr.ndim)
        for d in arr.shape:
            out += struct.pack("<I", d)
        out += arr.tobytes()
    return bytes(out)


def deserialize(blob: bytes) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    view = memoryview(blob)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError("truncated checkpoint")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise CheckpointError("bad checkpoint magic")
    (version,) = struct.unpack("<B", take(1))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (n_meta,) = struct.unpack("<H", take(2))
    metadata = {}
    for _ in range(n_meta):
        (klen,) = struct.unpack("<H", take(2))
        key = bytes(take(klen)).decode()
        (vlen,) = struct.unpack("<H", take(2))
        metadata[key] = bytes(take(vlen)).decode()
    (n_param,) = struct.unpack("<I", take(4))
    params: dict[str, np.ndarray] = {}
    for _ in range(n_param):
        (nlen,) = struct.unpack("<H", take(2))
        name = bytes(take(nlen)).decode()
        (ndim,) = struct.unpack("<B", take(1))
        shape = tuple(struct.unpack("<I", take(4))[0] for _ in range(ndim))
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        data = np.frombuffer(take(count * 4), dtype="<f4").reshape(shape)
        params[name] = np.array(data, dtype=np.float32)
    if pos != len(view):
        raise CheckpointError("trailing bytes after last parameter")
    return params, metadata


def save(path, named_params: dict[str, np.ndarray], metadata: dict[str, str] | None = None) -> None:
    Path(path).write_bytes(serialize(named_params, metadata))


def load(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    return deserialize(Path(path).read_bytes())


def identity_hash(blob: bytes) -> bytes:
    """8-byte checkpoint identity used in bitstream headers."""
    return hashlib.sha256(blob).digest()[:8]


def file_identity(path) -> bytes:
    return identity_hash(Path(path).read_bytes())
