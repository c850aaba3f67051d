"""Named encoder plug-ins.

A real deployment would register adapters around neural image/text
encoders here. The package ships `fake-hash`, a deterministic stand-in
that derives a unit vector from a hash of the payload, so the export
path is fully testable on machines without model weights.
"""

from __future__ import annotations

import hashlib
from typing import Protocol

import numpy as np


class EncodeError(RuntimeError):
    """A single item could not be encoded; the item is skipped."""


class Encoder(Protocol):
    """Maps payload strings (sentence text or image uri) to unit vectors."""

    name: str
    dim: int

    def encode_batch(self, payloads: list[str]) -> np.ndarray:
        """Return a len(payloads) x dim float32 matrix of unit rows.

        Raises EncodeError for a payload that cannot be encoded; callers
        that need per-item error isolation submit single-item batches.
        """
        ...


class FakeHashEncoder:
    """Deterministic hash-seeded random unit vectors.

    The same payload always maps to the same vector, on every platform,
    which is all the downstream tests need from an encoder. An empty
    payload is an encode failure, standing in for the unreadable-image /
    empty-sentence failures of a real encoder.
    """

    name = "fake-hash"

    def __init__(self, dim: int = 64):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.dim = dim

    def _encode_one(self, payload: str) -> np.ndarray:
        if not payload:
            raise EncodeError("empty payload")
        digest = hashlib.blake2b(payload.encode("utf-8"), digest_size=8).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "big"))
        vec = rng.standard_normal(self.dim)
        return (vec / np.linalg.norm(vec)).astype(np.float32)

    def encode_batch(self, payloads: list[str]) -> np.ndarray:
        rows = [self._encode_one(p) for p in payloads]
        if not rows:
            return np.zeros((0, self.dim), dtype=np.float32)
        return np.vstack(rows)


_REGISTRY = {
    FakeHashEncoder.name: FakeHashEncoder,
}


def available_encoders() -> list[str]:
    return sorted(_REGISTRY)


def get_encoder(name: str, dim: int) -> Encoder:
    """Instantiate a registered encoder at the requested output dim."""
    if name not in _REGISTRY:
        raise ValueError(
            f"unknown encoder {name!r}; available: {', '.join(available_encoders())}"
        )
    return _REGISTRY[name](dim=dim)
