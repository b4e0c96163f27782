"""Binary checkpoint of named float32 arrays.

Layout, all integers little-endian u32::

    b"CSNL" | version | entry count
    per entry: name length | UTF-8 name | ndim | dims... | float32 LE data
    CRC32 of every preceding byte
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"CSNL"
VERSION = 1


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class CRCError(CheckpointError):
    pass


def dumps(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(getattr(arr, "data", arr))
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise BadMagicError("not a CSNL checkpoint")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    version, count = struct.unpack_from("<II", body, 4)
    if version != VERSION:
        raise VersionError(f"checkpoint version {version}, expected {VERSION}")
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CRCError("checkpoint CRC mismatch")
    out: dict[str, np.ndarray] = {}
    pos = 12
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", body, pos)
            name = body[pos + 4 : pos + 4 + nlen].decode("utf-8")
            pos += 4 + nlen
            (ndim,) = struct.unpack_from("<I", body, pos)
            dims = struct.unpack_from(f"<{ndim}I", body, pos + 4)
            pos += 4 + 4 * ndim
            size = int(np.prod(dims, dtype=np.int64))
            arr = np.frombuffer(body, dtype="<f4", count=size, offset=pos).astype(np.float32).reshape(dims)
            pos += 4 * size
            if name in out:
                raise CheckpointError(f"duplicate entry {name!r}")
            out[name] = arr
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"truncated or malformed checkpoint: {exc}") from exc
    if pos != len(body):
        raise CheckpointError("trailing bytes after last entry")
    return out


def save_checkpoint(path, tensors: Mapping[str, np.ndarray]) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps(tensors))
    tmp.replace(path)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
