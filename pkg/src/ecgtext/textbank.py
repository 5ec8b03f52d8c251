"""Prompt rendering and the frozen text-embedding table.

The table maps raw label strings to fixed vectors; nothing downstream ever
writes to it. Keys are the labels themselves, not rendered prompts: whichever
process produces the vectors decides what to feed the language model, and the
label is the stable join key. Stored vectors are not forced to unit norm --
cosine similarity normalizes explicitly.

ETB1 binary layout (little-endian):

    magic "ETB1" | u32 version=1 | u32 entry_count | u32 dim
    per entry: u16 label byte-length + UTF-8 bytes, then dim f32 values
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import _Cursor
from .errors import DataError, FormatError, NumericError

ETB_MAGIC = b"ETB1"
ETB_VERSION = 1

DEFAULT_TEMPLATE = "This ECG shows {reports}."
PLACEHOLDER = "{reports}"


@dataclass(frozen=True)
class PromptTemplate:
    """A UTF-8 template with exactly one ``{reports}`` placeholder."""

    template: str = DEFAULT_TEMPLATE

    def __post_init__(self):
        n = self.template.count(PLACEHOLDER)
        if n != 1:
            raise DataError(
                f"template must contain exactly one {PLACEHOLDER!r} placeholder, found {n}")

    def render(self, label: str) -> str:
        return render_prompt(self, label)


def render_prompt(template: PromptTemplate, label: str) -> str:
    """Substitute the label verbatim; no other mutation of the template."""
    if not label:
        raise DataError("cannot render a prompt for an empty label")
    return template.template.replace(PLACEHOLDER, label)


class EmbeddingTable:
    """Ordered label -> vector table. Immutable after construction."""

    def __init__(self, labels: Sequence[str], vectors: np.ndarray):
        vectors = np.ascontiguousarray(vectors, dtype=np.float32)
        if vectors.ndim != 2:
            raise DataError("vectors must be a 2-D (entries x dim) array")
        if len(labels) != vectors.shape[0]:
            raise DataError(
                f"{len(labels)} labels but {vectors.shape[0]} vectors")
        if vectors.shape[0] < 1:
            raise DataError("embedding table must contain at least one entry")
        if vectors.shape[1] < 1:
            raise DataError("embedding dimension must be positive")
        if not np.isfinite(vectors).all():
            raise DataError("embedding table contains non-finite values")
        seen = set()
        for lab in labels:
            if not lab:
                raise DataError("empty label in embedding table")
            if lab in seen:
                raise DataError(f"duplicate label {lab!r} in embedding table")
            seen.add(lab)
        self.labels: tuple[str, ...] = tuple(labels)
        self.vectors = vectors
        self.vectors.setflags(write=False)
        self._index = {lab: i for i, lab in enumerate(self.labels)}

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, label: str) -> bool:
        return label in self._index

    def lookup(self, label: str) -> np.ndarray:
        """Return the stored vector (read-only view) for an exact label."""
        try:
            return self.vectors[self._index[label]]
        except KeyError:
            raise DataError(f"label {label!r} not present in embedding table") from None


def lookup(table: EmbeddingTable, label: str) -> np.ndarray:
    return table.lookup(label)


def _hash64(label: str, seed: int) -> int:
    h = hashlib.sha256()
    h.update(struct.pack("<Q", seed & 0xFFFFFFFFFFFFFFFF))
    h.update(label.encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little")


def synthetic_embed(label: str, dim: int, seed: int) -> np.ndarray:
    """Deterministic unit-norm stand-in vector for a frozen language model.

    A counter-based generator is keyed by a 64-bit hash of (label, seed), so
    the vector is a pure function of its arguments and distinct labels give
    independent directions (expected pairwise cosine 0, std ~ 1/sqrt(dim)).
    """
    if dim < 2:
        raise DataError(f"embedding dim must be >= 2, got {dim}")
    if not label:
        raise DataError("cannot embed an empty label")
    rng = np.random.Generator(np.random.Philox(key=_hash64(label, seed)))
    v = rng.standard_normal(dim)
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise NumericError(f"degenerate zero draw for label {label!r}")
    return (v / norm).astype(np.float32)


def build_bank(labels: Sequence[str], dim: int, seed: int) -> EmbeddingTable:
    """Synthetic embedding table over raw labels; pure function of its inputs."""
    vectors = np.stack([synthetic_embed(lab, dim, seed) for lab in labels])
    return EmbeddingTable(labels, vectors)


def table_to_bytes(table: EmbeddingTable) -> bytes:
    parts = [ETB_MAGIC, struct.pack("<III", ETB_VERSION, len(table), table.dim)]
    for lab, vec in zip(table.labels, table.vectors):
        raw = lab.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise DataError(f"label too long to serialize ({len(raw)} bytes)")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(vec.astype("<f4", copy=False).tobytes(order="C"))
    return b"".join(parts)


def table_sha256(table: EmbeddingTable) -> str:
    return hashlib.sha256(table_to_bytes(table)).hexdigest()


def save_table(table: EmbeddingTable, path) -> None:
    with open(path, "wb") as f:
        f.write(table_to_bytes(table))


def load_table(path) -> EmbeddingTable:
    with open(path, "rb") as f:
        return table_from_bytes(f.read())


def table_from_bytes(buf: bytes) -> EmbeddingTable:
    cur = _Cursor(buf)
    magic = cur.take(4, "magic")
    if magic != ETB_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {ETB_MAGIC!r}", offset=0)
    version, count, dim = cur.unpack("<III", "header")
    if version != ETB_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    labels = []
    rows = []
    for i in range(count):
        (nbytes,) = cur.unpack("<H", f"entry {i} label length")
        off = cur.off
        raw = cur.take(nbytes, f"entry {i} label")
        try:
            labels.append(raw.decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise FormatError(f"entry {i} label is not valid UTF-8: {exc}", offset=off)
        vec = cur.take(dim * 4, f"entry {i} vector")
        rows.append(np.frombuffer(vec, dtype="<f4"))
    cur.expect_end("last entry")
    try:
        return EmbeddingTable(labels, np.stack(rows) if rows else np.zeros((0, dim), np.float32))
    except DataError as exc:
        raise FormatError(str(exc), offset=len(buf))
