"""Persisted embedding store and the cosine screening engine.

Store file layout (all integers little-endian):

    magic  b"S2EMB1"
    u32    embedding dimension
    u64    row count
    per row: u32 id byte length, UTF-8 id bytes
    float64 payload, row-major (count x dim)
    u64    CRC-64 of every preceding byte

The CRC is the XZ variant of CRC-64 (reflected polynomial
0xC96C5795D7870F42, init and xorout all-ones).  Vectors persist
unnormalized; queries normalize at scoring time, so the stored payload
round-trips bit-exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "EmbeddingStore",
    "StoreError",
    "store_write",
    "store_read",
    "screen",
    "crc64",
]

STORE_MAGIC = b"S2EMB1"

_CRC64_POLY = 0xC96C5795D7870F42


def _crc64_table() -> list[int]:
    table = []
    for byte in range(256):
        crc = byte
        for _ in range(8):
            if crc & 1:
                crc = (crc >> 1) ^ _CRC64_POLY
            else:
                crc >>= 1
        table.append(crc)
    return table


_CRC64_TABLE = _crc64_table()


def crc64(data: bytes) -> int:
    crc = 0xFFFFFFFFFFFFFFFF
    for b in data:
        crc = _CRC64_TABLE[(crc ^ b) & 0xFF] ^ (crc >> 8)
    return crc ^ 0xFFFFFFFFFFFFFFFF


class StoreError(ValueError):
    """Raised on malformed, truncated, or corrupted store files."""


@dataclass(frozen=True)
class EmbeddingStore:
    """Immutable id -> vector table; safe for concurrent readers."""

    dim: int
    ids: tuple[str, ...]
    vectors: np.ndarray            # (count, dim) float64

    def __post_init__(self):
        if self.vectors.shape != (len(self.ids), self.dim):
            raise StoreError(
                f"vector table {self.vectors.shape} does not match "
                f"{len(self.ids)} ids of dim {self.dim}")
        if len(set(self.ids)) != len(self.ids):
            raise StoreError("duplicate ids in store")
        if self.vectors.size and not np.all(np.isfinite(self.vectors)):
            raise StoreError("store vectors must be finite")

    def __len__(self) -> int:
        return len(self.ids)

    @classmethod
    def from_vectors(cls, ids, vectors) -> "EmbeddingStore":
        matrix = np.asarray(vectors, dtype=np.float64)
        if matrix.ndim != 2:
            raise StoreError("vectors must form a 2-d matrix")
        return cls(dim=matrix.shape[1], ids=tuple(str(i) for i in ids),
                   vectors=matrix)

    def write(self, path) -> None:
        store_write(self.ids, self.vectors, path)


def store_write(ids, vectors, path) -> None:
    matrix = np.ascontiguousarray(vectors, dtype=np.float64)
    ids = [str(i) for i in ids]
    if matrix.ndim != 2 or matrix.shape[0] != len(ids):
        raise StoreError(
            f"vector matrix {matrix.shape} does not match {len(ids)} ids")
    if len(set(ids)) != len(ids):
        raise StoreError("duplicate ids in store")
    parts = [STORE_MAGIC,
             struct.pack("<I", matrix.shape[1]),
             struct.pack("<Q", len(ids))]
    for rid in ids:
        encoded = rid.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
    parts.append(matrix.astype("<f8").tobytes())
    body = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<Q", crc64(body)))


def store_read(path) -> EmbeddingStore:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(STORE_MAGIC) + 12 + 8:
        raise StoreError("store file truncated")
    body, crc_bytes = data[:-8], data[-8:]
    (expected,) = struct.unpack("<Q", crc_bytes)
    if crc64(body) != expected:
        raise StoreError("store checksum mismatch")
    if not body.startswith(STORE_MAGIC):
        raise StoreError("bad store magic")
    offset = len(STORE_MAGIC)
    (dim,) = struct.unpack_from("<I", body, offset)
    offset += 4
    (count,) = struct.unpack_from("<Q", body, offset)
    offset += 8
    ids = []
    for _ in range(count):
        if offset + 4 > len(body):
            raise StoreError("store file truncated in id table")
        (n,) = struct.unpack_from("<I", body, offset)
        offset += 4
        ids.append(body[offset:offset + n].decode("utf-8"))
        offset += n
    nbytes = 8 * dim * count
    if offset + nbytes != len(body):
        raise StoreError("store payload size mismatch")
    vectors = np.frombuffer(body, dtype="<f8", count=dim * count,
                            offset=offset).reshape(count, dim).copy()
    return EmbeddingStore(dim=int(dim), ids=tuple(ids), vectors=vectors)


def screen(query: np.ndarray, store: EmbeddingStore,
           top_k: int) -> list[tuple[str, float]]:
    """Rank every stored vector by cosine similarity to the query.

    Descending score, ties broken by id; returns exactly
    min(top_k, len(store)) entries.
    """
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    if len(store) == 0:
        raise StoreError("cannot screen an empty store")
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if q.shape[0] != store.dim:
        raise ValueError(
            f"query dim {q.shape[0]} does not match store dim {store.dim}")
    eps = 1e-12
    qn = q / np.sqrt((q * q).sum() + eps * eps)
    norms = np.sqrt((store.vectors ** 2).sum(axis=1) + eps * eps)
    scores = (store.vectors @ qn) / norms
    order = sorted(range(len(store)),
                   key=lambda i: (-scores[i], store.ids[i]))
    return [(store.ids[i], float(scores[i])) for i in order[:top_k]]
