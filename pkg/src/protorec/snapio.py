"""Checksummed binary snapshot files: magic + version + payload + CRC-32."""

from __future__ import annotations

import struct
import zlib
from pathlib import Path


class CorruptSnapshot(ValueError):
    """Snapshot file is truncated or fails its checksum."""


_HEAD = struct.Struct("<4sI")
_CRC = struct.Struct("<I")


def write_blob(path: str | Path, magic: bytes, version: int, payload: bytes) -> None:
    if len(magic) != 4:
        raise ValueError("magic must be exactly 4 bytes")
    body = _HEAD.pack(magic, version) + payload
    crc = zlib.crc32(body) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(_CRC.pack(crc))


def read_blob(path: str | Path, magic: bytes, version: int) -> bytes:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEAD.size + _CRC.size:
        raise CorruptSnapshot("snapshot file too short")
    body, crc_bytes = data[: -_CRC.size], data[-_CRC.size :]
    (stored_crc,) = _CRC.unpack(crc_bytes)
    if zlib.crc32(body) & 0xFFFFFFFF != stored_crc:
        raise CorruptSnapshot("snapshot checksum mismatch")
    got_magic, got_version = _HEAD.unpack_from(body)
    if got_magic != magic:
        raise CorruptSnapshot(f"unexpected magic {got_magic!r}")
    if got_version != version:
        raise CorruptSnapshot(f"unsupported snapshot version {got_version}")
    return body[_HEAD.size :]
