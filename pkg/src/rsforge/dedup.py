"""Near-duplicate elimination over embedding stores.

Pairs of records whose cosine similarity clears a threshold form the
edges of a graph; connected components (via union-find) become duplicate
groups, and the lexicographically smallest id in each group survives as
its representative.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .store import EmbeddingStore

DEFAULT_TAU_SENTENCES = 0.95
DEFAULT_TAU_IMAGES = 0.96


class UnionFind:
    """Disjoint-set forest with union by rank and path compression."""

    def __init__(self, count: int):
        if count < 0:
            raise ValueError("count must be non-negative")
        self.count = count
        self.parent = list(range(count))
        self.rank = [0] * count

    def _check(self, i: int) -> None:
        if not 0 <= i < self.count:
            raise IndexError(f"element {i} out of range [0, {self.count})")

    def find(self, i: int) -> int:
        self._check(i)
        root = i
        while self.parent[root] != root:
            root = self.parent[root]
        # path compression: point the whole chain at the root
        while self.parent[i] != root:
            self.parent[i], i = root, self.parent[i]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1

    def components(self) -> list[list[int]]:
        groups: dict[int, list[int]] = {}
        for i in range(self.count):
            groups.setdefault(self.find(i), []).append(i)
        return list(groups.values())


@dataclass(frozen=True)
class DedupResult:
    representative: dict[str, str]
    components: list[list[str]]

    def __post_init__(self):
        seen: set[str] = set()
        for group in self.components:
            for rid in group:
                if rid in seen:
                    raise ValueError(f"id {rid!r} appears in two components")
                seen.add(rid)
        for rid, rep in self.representative.items():
            if self.representative.get(rep) != rep:
                raise ValueError(f"representative of {rid!r} is not canonical")

    @property
    def kept_ids(self) -> list[str]:
        return sorted({rep for rep in self.representative.values()})

    def removed_count(self) -> int:
        return len(self.representative) - len(self.kept_ids)


def build_similarity_edges(
    store: EmbeddingStore,
    tau: float,
    mode: str = "exact",
    cluster_members: Iterable[list[str]] | None = None,
    block: int = 512,
) -> Iterator[tuple[str, str, float]]:
    """Yield (id_a, id_b, score) for unordered pairs with cosine >= tau.

    Exact mode scans all pairs in blocks. cluster_pruned mode only
    compares records that share a cluster — an approximation that misses
    cross-cluster duplicates, so it is opt-in for large runs.
    """
    if not store.normalized:
        raise ValueError("similarity edges require a normalized store")
    if mode == "exact":
        yield from _exact_edges(store, tau, block)
    elif mode == "cluster_pruned":
        if cluster_members is None:
            raise ValueError("cluster_pruned mode needs cluster member lists")
        for members in cluster_members:
            if len(members) > 1:
                yield from _exact_edges(store.subset(members), tau, block)
    else:
        raise ValueError(f"unknown dedup mode {mode!r}")


def _exact_edges(
    store: EmbeddingStore, tau: float, block: int
) -> Iterator[tuple[str, str, float]]:
    vecs = store.vectors.astype(np.float64)
    n = store.count
    for i0 in range(0, n, block):
        a = vecs[i0 : i0 + block]
        for j0 in range(i0, n, block):
            sims = a @ vecs[j0 : j0 + block].T
            rows, cols = np.nonzero(sims >= tau)
            for r, c in zip(rows.tolist(), cols.tolist()):
                gi, gj = i0 + r, j0 + c
                if gi < gj:
                    yield store.ids[gi], store.ids[gj], float(sims[r, c])


def dedup_components(
    edges: Iterable[tuple[str, str, float] | tuple[str, str]],
    ids: Iterable[str],
) -> DedupResult:
    """Partition ids into duplicate groups induced by the edges.

    Isolated ids form singleton groups. The representative of each group
    is its lexicographically smallest id, so results do not depend on
    edge order or parallel partitioning.
    """
    id_list = list(ids)
    index = {rid: i for i, rid in enumerate(id_list)}
    if len(index) != len(id_list):
        raise ValueError("duplicate ids in dedup input")
    uf = UnionFind(len(id_list))
    for edge in edges:
        a, b = edge[0], edge[1]
        if a not in index or b not in index:
            raise ValueError(f"edge ({a!r}, {b!r}) references unknown id")
        uf.union(index[a], index[b])
    components = []
    representative = {}
    for group in uf.components():
        names = sorted(id_list[i] for i in group)
        rep = names[0]
        components.append(names)
        for name in names:
            representative[name] = rep
    components.sort(key=lambda g: g[0])
    return DedupResult(representative, components)


def dedup_store(
    store: EmbeddingStore, tau: float, mode: str = "exact", **kwargs
) -> DedupResult:
    edges = build_similarity_edges(store, tau, mode, **kwargs)
    return dedup_components(edges, store.ids)
