"""K-means over embedding stores.

Used three ways: semantic clustering of sentence embeddings, image
clustering for balance sampling, and as the coarse level of hierarchical
retrieval. Spherical mode (the default) renormalizes centroids every
step so assignment by cosine and by Euclidean distance agree; plain mode
runs classic Lloyd iterations on raw vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ioutil import read_jsonl, write_jsonl
from .store import EmbeddingStore, read_store, write_store


@dataclass(frozen=True)
class ClusterModel:
    k: int
    centroids: np.ndarray  # k x dim, float64
    assignments: dict[str, int]
    members: tuple[tuple[str, ...], ...]
    inertia: float
    spherical: bool
    inertia_history: tuple[float, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if self.centroids.shape[0] != self.k:
            raise ValueError("centroid count disagrees with k")
        if len(self.members) != self.k:
            raise ValueError("member-list count disagrees with k")
        total = 0
        for c, group in enumerate(self.members):
            total += len(group)
            for rid in group:
                if self.assignments.get(rid) != c:
                    raise ValueError(
                        f"id {rid!r} listed in cluster {c} but assigned "
                        f"{self.assignments.get(rid)}"
                    )
        if total != len(self.assignments):
            raise ValueError("members and assignments cover different id sets")
        for rid, c in self.assignments.items():
            if not 0 <= c < self.k:
                raise ValueError(f"id {rid!r} assigned out-of-range cluster {c}")
        if self.spherical:
            norms = np.linalg.norm(self.centroids, axis=1)
            if not np.allclose(norms, 1.0, atol=1e-5):
                raise ValueError("spherical model has non-unit centroids")

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Squared Euclidean distance matrix, points x centroids, float64."""
    p2 = np.sum(points * points, axis=1, keepdims=True)
    c2 = np.sum(centroids * centroids, axis=1)
    d = p2 - 2.0 * (points @ centroids.T) + c2
    return np.maximum(d, 0.0)


def _seed_centroids(
    points: np.ndarray, k: int, rng: np.random.Generator
) -> np.ndarray:
    """k-means++ seeding: spread initial centroids by squared distance."""
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = _sq_dists(points, points[chosen[-1]][None, :]).ravel()
    while len(chosen) < k:
        total = float(d2.sum())
        if total <= 0.0:
            # all remaining mass is at distance zero (duplicate points):
            # take the lowest-index point not already chosen
            taken = set(chosen)
            nxt = next(i for i in range(n) if i not in taken)
        else:
            nxt = int(rng.choice(n, p=d2 / total))
        chosen.append(nxt)
        d2 = np.minimum(d2, _sq_dists(points, points[nxt][None, :]).ravel())
    return points[chosen].copy()


def _assign_points(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Nearest centroid per point; ties go to the lowest cluster index."""
    return np.argmin(_sq_dists(points, centroids), axis=1)


def _repair_empty(
    points: np.ndarray, centroids: np.ndarray, labels: np.ndarray, k: int
) -> None:
    """Give each empty cluster the point farthest from its own centroid.

    Mutates centroids and labels in place. Donor clusters with a single
    member are protected so repair never creates a new empty cluster.
    """
    counts = np.bincount(labels, minlength=k)
    if not np.any(counts == 0):
        return
    n = points.shape[0]
    point_d2 = _sq_dists(points, centroids)[np.arange(n), labels]
    for empty in np.nonzero(counts == 0)[0]:
        eligible = counts[labels] > 1
        if not np.any(eligible):
            break
        masked = np.where(eligible, point_d2, -np.inf)
        far = int(np.argmax(masked))
        counts[labels[far]] -= 1
        labels[far] = empty
        counts[empty] = 1
        centroids[empty] = points[far]
        point_d2[far] = 0.0


def kmeans_fit(
    store: EmbeddingStore,
    k: int,
    max_iters: int = 100,
    tol: float = 1e-4,
    seed: int = 0,
    spherical: bool = True,
) -> ClusterModel:
    """Lloyd iterations with k-means++ seeding and empty-cluster repair.

    Deterministic for a fixed seed: seeding, assignment ties, and repair
    choices are all resolved by fixed ordering, and centroid updates sum
    members in index order regardless of worker configuration.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > store.count:
        raise ValueError(f"k={k} exceeds point count {store.count}")
    if spherical and not store.normalized:
        raise ValueError("spherical clustering requires a normalized store")

    points = store.vectors.astype(np.float64)
    n = points.shape[0]
    rng = np.random.default_rng(seed)
    centroids = _seed_centroids(points, k, rng)
    if spherical:
        centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)

    history: list[float] = []
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(max_iters):
        labels = _assign_points(points, centroids)
        _repair_empty(points, centroids, labels, k)
        history.append(float(_sq_dists(points, centroids)[np.arange(n), labels].sum()))

        new_centroids = centroids.copy()
        for c in range(k):
            rows = np.nonzero(labels == c)[0]
            if rows.size:
                mean = points[rows].sum(axis=0) / rows.size
                if spherical:
                    norm = np.linalg.norm(mean)
                    if norm > 0:
                        mean = mean / norm
                    else:
                        mean = centroids[c]  # degenerate: keep previous
                new_centroids[c] = mean
        movement = float(np.max(np.linalg.norm(new_centroids - centroids, axis=1)))
        centroids = new_centroids
        if movement < tol:
            break

    labels = _assign_points(points, centroids)
    _repair_empty(points, centroids, labels, k)
    inertia = float(_sq_dists(points, centroids)[np.arange(n), labels].sum())
    history.append(inertia)
    assignments = {rid: int(labels[i]) for i, rid in enumerate(store.ids)}
    members = tuple(
        tuple(store.ids[i] for i in np.nonzero(labels == c)[0]) for c in range(k)
    )
    return ClusterModel(
        k=k,
        centroids=centroids,
        assignments=assignments,
        members=members,
        inertia=inertia,
        spherical=spherical,
        inertia_history=tuple(history),
    )


def assign(store: EmbeddingStore, model: ClusterModel) -> dict[str, int]:
    """Map every store id to its nearest centroid (ties: lowest index)."""
    if store.dim != model.dim:
        raise ValueError(
            f"store dim {store.dim} does not match model dim {model.dim}"
        )
    labels = _assign_points(store.vectors.astype(np.float64), model.centroids)
    return {rid: int(labels[i]) for i, rid in enumerate(store.ids)}


def nearest_centroids(
    query: np.ndarray, model: ClusterModel, m: int
) -> list[tuple[int, float]]:
    """Exact top-m centroids for a query vector.

    Scores are cosine similarity in spherical mode and negated squared
    Euclidean distance otherwise, so higher is always better. Ties break
    toward the lowest cluster index.
    """
    if not 1 <= m <= model.k:
        raise ValueError(f"m={m} outside [1, {model.k}]")
    q = np.asarray(query, dtype=np.float64).ravel()
    if q.shape[0] != model.dim:
        raise ValueError(f"query dim {q.shape[0]} does not match model {model.dim}")
    if model.spherical:
        norm = np.linalg.norm(q)
        if norm == 0:
            raise ValueError("zero-norm query")
        scores = model.centroids @ (q / norm)
    else:
        scores = -_sq_dists(q[None, :], model.centroids).ravel()
    order = sorted(range(model.k), key=lambda c: (-scores[c], c))
    return [(c, float(scores[c])) for c in order[:m]]


# ---------------------------------------------------------------------------
# persistence: centroids as an embedding store + assignments as JSONL


def save_model(model: ClusterModel, centroids_path, assignments_path) -> None:
    ids = tuple(f"c{idx:06d}" for idx in range(model.k))
    store = EmbeddingStore(
        ids, model.centroids.astype(np.float32), normalized=model.spherical
    )
    write_store(store, centroids_path)
    write_jsonl(
        assignments_path,
        ({"id": rid, "cluster": c} for rid, c in model.assignments.items()),
    )


def load_model(centroids_path, assignments_path) -> ClusterModel:
    store = read_store(centroids_path)
    assignments: dict[str, int] = {}
    for rec in read_jsonl(assignments_path):
        assignments[rec["id"]] = int(rec["cluster"])
    k = store.count
    member_lists: list[list[str]] = [[] for _ in range(k)]
    for rid, c in assignments.items():
        if not 0 <= c < k:
            raise ValueError(f"assignment of {rid!r} to cluster {c} outside [0, {k})")
        member_lists[c].append(rid)
    members = tuple(tuple(group) for group in member_lists)
    return ClusterModel(
        k=k,
        centroids=store.vectors.astype(np.float64),
        assignments=assignments,
        members=members,
        inertia=float("nan"),
        spherical=store.normalized,
    )


def model_paths(directory) -> tuple[Path, Path]:
    d = Path(directory)
    return d / "centroids.rseb", d / "assignments.jsonl"
