"""Two-level retrieval: probe the nearest centroids, then search exactly
inside the probed clusters. Returns the top-k sentences for an image
embedding with exact cosine scores, so the only approximation is which
clusters were probed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cluster import ClusterModel, nearest_centroids
from .store import EmbeddingStore


@dataclass(frozen=True)
class RetrievalHit:
    sentence_id: str
    score: float
    cluster: int
    rank: int

    def to_json(self) -> dict:
        return {
            "sentence_id": self.sentence_id,
            "score": self.score,
            "rank": self.rank,
        }


def check_coverage(store: EmbeddingStore, model: ClusterModel) -> None:
    """Every store id must be assigned to a cluster."""
    missing = [rid for rid in store.ids if rid not in model.assignments]
    if missing:
        raise ValueError(
            f"{len(missing)} store ids lack cluster assignments "
            f"(first: {missing[0]!r})"
        )


def hierarchical_retrieve(
    image_vec: np.ndarray,
    text_store: EmbeddingStore,
    model: ClusterModel,
    k: int = 3,
    probes: int = 1,
) -> list[RetrievalHit]:
    """Top-k sentences for one image via probed clusters.

    Candidates are the members of the `probes` nearest centroids; the
    result is the exact cosine top-k over them, ties broken by ascending
    sentence id. Fewer candidates than k returns them all.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not text_store.normalized:
        raise ValueError("retrieval requires a normalized sentence store")
    q = np.asarray(image_vec, dtype=np.float64).ravel()
    norm = np.linalg.norm(q)
    if norm == 0:
        raise ValueError("zero-norm query vector")
    q = q / norm

    probed = nearest_centroids(q, model, probes)
    candidate_ids: list[str] = []
    candidate_cluster: dict[str, int] = {}
    for cluster_idx, _ in probed:
        for rid in model.members[cluster_idx]:
            candidate_ids.append(rid)
            candidate_cluster[rid] = cluster_idx
    if not candidate_ids:
        return []

    rows = np.array([text_store.index_of(rid) for rid in candidate_ids])
    scores = text_store.vectors[rows].astype(np.float64) @ q
    order = sorted(
        range(len(candidate_ids)), key=lambda i: (-scores[i], candidate_ids[i])
    )
    hits = []
    for rank, i in enumerate(order[:k], start=1):
        rid = candidate_ids[i]
        hits.append(RetrievalHit(rid, float(scores[i]), candidate_cluster[rid], rank))
    return hits


def _hit_ids(hits: Sequence) -> list[str]:
    ids = []
    for h in hits:
        if isinstance(h, RetrievalHit):
            ids.append(h.sentence_id)
        elif isinstance(h, str):
            ids.append(h)
        else:
            ids.append(h[0])  # (id, score) pairs
    return ids


def recall_at_k(hits: Sequence, oracle_hits: Sequence) -> float:
    """Fraction of the oracle's top-k returned, for the same query and k.

    The oracle fixes k. A hit list longer than the oracle means the two
    sides were retrieved with different k, which is a caller bug.
    """
    oracle_ids = _hit_ids(oracle_hits)
    got_ids = _hit_ids(hits)
    if not oracle_ids:
        raise ValueError("oracle hit list is empty")
    if len(got_ids) > len(oracle_ids):
        raise ValueError(
            f"hit list ({len(got_ids)}) longer than oracle ({len(oracle_ids)}): "
            "k mismatch"
        )
    return len(set(got_ids) & set(oracle_ids)) / len(oracle_ids)


def retrieval_record(image_id: str, hits: Sequence[RetrievalHit]) -> dict:
    """Wire form for one image's hits: {"image_id", "hits": [...]}. """
    return {"image_id": image_id, "hits": [h.to_json() for h in hits]}
