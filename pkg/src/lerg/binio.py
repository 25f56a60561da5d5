"""Little-endian artifact headers and atomic file writes.

Every binary artifact starts with an 8-byte magic and a u32 version. The
module-specific fields follow, then a 16-byte config hash (all zeros when the
artifact was produced outside a pipeline run).
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

VERSION = 1
HASH_BYTES = 16


class ArtifactError(ValueError):
    pass


def config_digest(config_hash: str | None) -> bytes:
    if not config_hash:
        return bytes(HASH_BYTES)
    raw = bytes.fromhex(config_hash)
    if len(raw) != HASH_BYTES:
        raise ArtifactError(f"config hash must be {HASH_BYTES} bytes")
    return raw


def pack_header(magic: bytes, fmt: str, fields, config_hash: str | None = None) -> bytes:
    assert len(magic) == 8
    return (
        magic
        + struct.pack("<I", VERSION)
        + struct.pack("<" + fmt, *fields)
        + config_digest(config_hash)
    )


class Reader:
    def __init__(self, data: bytes, name: str = "artifact"):
        self.data = data
        self.pos = 0
        self.name = name

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ArtifactError(f"{self.name}: truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        fmt = "<" + fmt
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def header(self, magic: bytes, fmt: str):
        got = self.take(8)
        if got != magic:
            raise ArtifactError(f"{self.name}: bad magic {got!r}, expected {magic!r}")
        (version,) = self.unpack("I")
        if version != VERSION:
            raise ArtifactError(f"{self.name}: unsupported version {version}")
        fields = self.unpack(fmt)
        digest = self.take(HASH_BYTES)
        config_hash = digest.hex() if any(digest) else None
        return fields, config_hash

    def array(self, dtype, count: int):
        dt = np.dtype(dtype).newbyteorder("<")
        raw = self.take(dt.itemsize * count)
        return np.frombuffer(raw, dtype=dt, count=count).astype(dt.newbyteorder("="))

    def done(self):
        if self.pos != len(self.data):
            raise ArtifactError(f"{self.name}: {len(self.data) - self.pos} trailing bytes")


def atomic_write(path, data: bytes | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


TABLE_MAGIC = b"LERGHTBL"


def table_to_bytes(table, config_hash: str | None = None) -> bytes:
    table = np.asarray(table, dtype=np.float64)
    return pack_header(TABLE_MAGIC, "QQ", table.shape, config_hash) + table.astype("<f8").tobytes()


def table_from_bytes(data: bytes, name="embedding table"):
    rd = Reader(data, name)
    (n, d), config_hash = rd.header(TABLE_MAGIC, "QQ")
    table = rd.array("f8", n * d).reshape(n, d)
    rd.done()
    return table, config_hash
