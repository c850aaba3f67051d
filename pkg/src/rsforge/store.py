"""Id-indexed embedding matrices and the RSEB v1 binary format.

RSEB v1 layout (all integers and floats little-endian):

    offset 0   magic bytes 0x52 0x53 0x45 0x42 ("RSEB")
    offset 4   u32 version (must be 1)
    offset 8   u32 dim
    offset 12  u64 count
    offset 20  u8  normalized flag (0 or 1)
    offset 21  id table: count entries of (u16 byte length, UTF-8 bytes)
    then       count x dim float32, row-major

Stores are immutable after construction; similarity kernels assume rows
are unit-norm (call `normalize` once up front).
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"RSEB"
VERSION = 1
NORM_ATOL = 1e-5


class StoreFormatError(ValueError):
    """Raised when an RSEB file is malformed; message carries byte offsets."""


@dataclass(frozen=True)
class EmbeddingStore:
    """A count x dim float32 matrix with one unique string id per row."""

    ids: tuple[str, ...]
    vectors: np.ndarray
    normalized: bool = False
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        vecs = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if vecs.ndim != 2:
            raise ValueError(f"vectors must be 2-D, got shape {vecs.shape}")
        if len(self.ids) != vecs.shape[0]:
            raise ValueError(
                f"{len(self.ids)} ids but {vecs.shape[0]} vector rows"
            )
        if not np.all(np.isfinite(vecs)):
            raise ValueError("vectors contain NaN or Inf entries")
        index = {}
        for i, id_ in enumerate(self.ids):
            if id_ in index:
                raise ValueError(f"duplicate id {id_!r}")
            index[id_] = i
        if self.normalized and len(self.ids):
            norms = np.linalg.norm(vecs, axis=1)
            bad = np.where(np.abs(norms - 1.0) > NORM_ATOL)[0]
            if bad.size:
                i = int(bad[0])
                raise ValueError(
                    f"store marked normalized but row {self.ids[i]!r} has "
                    f"norm {norms[i]:.6f}"
                )
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "vectors", vecs)
        object.__setattr__(self, "_index", index)

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.count

    def __contains__(self, id_: str) -> bool:
        return id_ in self._index

    def row(self, id_: str) -> np.ndarray:
        """Vector for one id. KeyError when absent."""
        return self.vectors[self._index[id_]]

    def index_of(self, id_: str) -> int:
        return self._index[id_]

    def subset(self, ids: list[str] | tuple[str, ...]) -> "EmbeddingStore":
        """New store holding the given ids, in the given order."""
        rows = [self._index[id_] for id_ in ids]
        return EmbeddingStore(tuple(ids), self.vectors[rows].copy(), self.normalized)


def normalize(store: EmbeddingStore) -> EmbeddingStore:
    """Return a copy with every row scaled to unit L2 norm.

    A zero-norm row is an error naming the offending id.
    """
    if store.count == 0:
        return EmbeddingStore(store.ids, store.vectors, normalized=True)
    norms = np.linalg.norm(store.vectors.astype(np.float64), axis=1)
    zero = np.where(norms == 0.0)[0]
    if zero.size:
        raise ValueError(f"cannot normalize zero-norm row {store.ids[int(zero[0])]!r}")
    vecs = (store.vectors.astype(np.float64) / norms[:, None]).astype(np.float32)
    return EmbeddingStore(store.ids, vecs, normalized=True)


def cosine_sim(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity of two vectors; requires equal dims, nonzero norms."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ValueError(f"dim mismatch: {u.shape[0]} vs {v.shape[0]}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine similarity undefined for zero-norm vector")
    return float(np.dot(u, v) / (nu * nv))


def top_k_bruteforce(
    query: np.ndarray, store: EmbeddingStore, k: int
) -> list[tuple[str, float]]:
    """Exact top-k rows by cosine, score-descending, ties by ascending id.

    The store must be normalized; the query is normalized here.
    """
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    if not store.normalized:
        raise ValueError("top_k_bruteforce requires a normalized store")
    if k == 0 or store.count == 0:
        return []
    q = np.asarray(query, dtype=np.float64).ravel()
    if q.shape[0] != store.dim:
        raise ValueError(f"dim mismatch: query {q.shape[0]} vs store {store.dim}")
    qn = np.linalg.norm(q)
    if qn == 0.0:
        raise ValueError("zero-norm query")
    scores = store.vectors.astype(np.float64) @ (q / qn)
    order = sorted(range(store.count), key=lambda i: (-scores[i], store.ids[i]))
    return [(store.ids[i], float(scores[i])) for i in order[: min(k, store.count)]]


def write_store(store: EmbeddingStore, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", store.dim))
        fh.write(struct.pack("<Q", store.count))
        fh.write(struct.pack("<B", 1 if store.normalized else 0))
        for id_ in store.ids:
            raw = id_.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise ValueError(f"id too long for format ({len(raw)} bytes)")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
        fh.write(np.ascontiguousarray(store.vectors, dtype="<f4").tobytes())


def read_store(path: str | os.PathLike) -> EmbeddingStore:
    with open(path, "rb") as fh:
        data = fh.read()

    def need(offset: int, nbytes: int, what: str) -> bytes:
        if offset + nbytes > len(data):
            raise StoreFormatError(
                f"truncated file reading {what}: expected {offset + nbytes} "
                f"bytes, file has {len(data)}"
            )
        return data[offset : offset + nbytes]

    if need(0, 4, "magic") != MAGIC:
        raise StoreFormatError(
            f"bad magic at offset 0: {data[:4]!r}, expected {MAGIC!r}"
        )
    (version,) = struct.unpack("<I", need(4, 4, "version"))
    if version != VERSION:
        raise StoreFormatError(f"unsupported version {version} at offset 4")
    (dim,) = struct.unpack("<I", need(8, 4, "dim"))
    if dim == 0:
        raise StoreFormatError("dim is 0 at offset 8")
    (count,) = struct.unpack("<Q", need(12, 8, "count"))
    (norm_flag,) = struct.unpack("<B", need(20, 1, "normalized flag"))
    if norm_flag not in (0, 1):
        raise StoreFormatError(f"normalized flag {norm_flag} at offset 20 not 0/1")

    offset = 21
    ids = []
    for i in range(count):
        (length,) = struct.unpack("<H", need(offset, 2, f"id[{i}] length"))
        offset += 2
        ids.append(need(offset, length, f"id[{i}] bytes").decode("utf-8"))
        offset += length
    matrix_bytes = count * dim * 4
    raw = need(offset, matrix_bytes, "vector matrix")
    if offset + matrix_bytes != len(data):
        raise StoreFormatError(
            f"trailing garbage: file has {len(data)} bytes, format ends at "
            f"{offset + matrix_bytes}"
        )
    vectors = np.frombuffer(raw, dtype="<f4").reshape(count, dim).copy()
    return EmbeddingStore(tuple(ids), vectors, normalized=bool(norm_flag))
