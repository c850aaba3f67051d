"""Deterministic text-to-vector encoders for generated captions.

The similarity gate needs an embedding for every generated caption.
Real deployments plug in a neural encoder through the RSEB file
boundary; these two encoders keep the pipeline self-contained:

* ``HashTextEncoder`` — a seeded pseudo-random unit vector per distinct
  text.  Deterministic and collision-resistant, but carries no
  semantics; useful for smoke runs and format tests.
* ``LexiconTextEncoder`` — averages known word vectors from an RSEB
  store (word id → vector) and renormalizes, so texts about the same
  topic land near the topic direction.  Texts with no known words
  cannot be encoded and are reported as skipped.
"""

from __future__ import annotations

import hashlib
from typing import Iterable, Protocol, Sequence

import numpy as np

from .filters import TOKEN_STRIP_CHARS
from .store import EmbeddingStore

__all__ = [
    "HashTextEncoder",
    "LexiconTextEncoder",
    "TextEncoder",
    "encode_texts",
]


class TextEncoder(Protocol):
    """Maps a text to a unit vector, or None when it cannot encode."""

    dim: int

    def encode(self, text: str) -> np.ndarray | None: ...


class HashTextEncoder:
    """Seeded pseudo-random unit vectors keyed by the text bytes."""

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.dim = int(dim)

    def encode(self, text: str) -> np.ndarray | None:
        digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
        seed = int.from_bytes(digest, "little")
        rng = np.random.default_rng(seed)
        vec = rng.standard_normal(self.dim)
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:  # astronomically unlikely; retry with shifted seed
            vec = np.random.default_rng(seed + 1).standard_normal(self.dim)
            norm = float(np.linalg.norm(vec))
        return (vec / norm).astype(np.float64)


class LexiconTextEncoder:
    """Mean of known word vectors, renormalized to unit length."""

    def __init__(self, word_store: EmbeddingStore):
        if word_store.count == 0:
            raise ValueError("word-vector store is empty")
        self.words = word_store
        self.dim = word_store.dim

    def encode(self, text: str) -> np.ndarray | None:
        rows = []
        for token in text.lower().split():
            word = token.strip(TOKEN_STRIP_CHARS)
            if word and word in self.words:
                rows.append(self.words.row(word))
        if not rows:
            return None
        mean = np.mean(np.asarray(rows, dtype=np.float64), axis=0)
        norm = float(np.linalg.norm(mean))
        if norm == 0.0:
            return None
        return mean / norm


def encode_texts(
    encoder: TextEncoder,
    items: Iterable[tuple[str, str]],
) -> tuple[EmbeddingStore, list[str]]:
    """Encode (id, text) pairs into a normalized store.

    Returns the store plus the ids the encoder could not handle; those
    ids simply have no row, which downstream joins count as missing
    embeddings.
    """
    ids: list[str] = []
    rows: list[np.ndarray] = []
    skipped: list[str] = []
    for item_id, text in items:
        vec = encoder.encode(text)
        if vec is None:
            skipped.append(item_id)
        else:
            ids.append(item_id)
            rows.append(np.asarray(vec, dtype=np.float64))
    if rows:
        matrix = np.asarray(rows, dtype=np.float32)
    else:
        matrix = np.zeros((0, encoder.dim), dtype=np.float32)
    return EmbeddingStore(tuple(ids), matrix, normalized=True), skipped
