"""ETB1 embedding-table wire format (writer plus a reader for self-checks).

Layout, little-endian throughout:

    magic "ETB1" | u32 version=1 | u32 entry_count | u32 dim
    per entry: u16 label byte-length + UTF-8 bytes, then dim f32 values

This implementation is written against the published byte layout; the
training pipeline that consumes these files has its own independent reader.
"""

from __future__ import annotations

import struct
from typing import Sequence

import numpy as np

MAGIC = b"ETB1"
VERSION = 1


class Etb1Error(Exception):
    pass


def write_table(path, labels: Sequence[str], vectors: np.ndarray) -> None:
    vectors = np.ascontiguousarray(vectors, dtype=np.float32)
    if vectors.ndim != 2 or vectors.shape[0] != len(labels):
        raise Etb1Error(f"need one vector row per label, got {vectors.shape} "
                        f"for {len(labels)} labels")
    parts = [MAGIC, struct.pack("<III", VERSION, len(labels), vectors.shape[1])]
    for label, vec in zip(labels, vectors):
        raw = label.encode("utf-8")
        if not raw:
            raise Etb1Error("empty label")
        if len(raw) > 0xFFFF:
            raise Etb1Error(f"label too long ({len(raw)} bytes)")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(vec.astype("<f4", copy=False).tobytes(order="C"))
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def read_table(path) -> tuple[list[str], np.ndarray]:
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != MAGIC:
        raise Etb1Error(f"bad magic {buf[:4]!r}")
    version, count, dim = struct.unpack_from("<III", buf, 4)
    if version != VERSION:
        raise Etb1Error(f"unsupported version {version}")
    off = 16
    labels: list[str] = []
    rows = np.empty((count, dim), dtype=np.float32)
    for i in range(count):
        if off + 2 > len(buf):
            raise Etb1Error(f"truncated at entry {i}")
        (nbytes,) = struct.unpack_from("<H", buf, off)
        off += 2
        end = off + nbytes + dim * 4
        if end > len(buf):
            raise Etb1Error(f"truncated at entry {i}")
        labels.append(buf[off:off + nbytes].decode("utf-8"))
        off += nbytes
        rows[i] = np.frombuffer(buf, dtype="<f4", count=dim, offset=off)
        off += dim * 4
    if off != len(buf):
        raise Etb1Error(f"{len(buf) - off} trailing bytes")
    return labels, rows
