"""Cluster-capped balance sampling.

Head clusters are cut down to a fixed cap while tail clusters pass
through whole, flattening the long-tailed cluster distribution. Within
an oversized cluster, records are kept by lowest stable hash of
(seed, image_id), so the selection is uniform, order-independent, and
identical for any worker count.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .ioutil import env_workers, map_ordered, stable_hash
from .pairs import UNCLUSTERED, PairRecord

PRESET_CAPS = {"15m": 20, "30m": 35, "100m": 180}


@dataclass(frozen=True)
class SamplingPlan:
    cap: int
    seed: int
    per_cluster_quota: dict[int, int]


@dataclass(frozen=True)
class ClusterSizes:
    """Per-cluster record counts before and after sampling."""

    before: dict[int, int]
    after: dict[int, int]

    def rows(self) -> list[dict]:
        return [
            {"cluster": c, "before": self.before[c], "after": self.after.get(c, 0)}
            for c in sorted(self.before)
        ]


def preset_cap(name: str) -> int:
    if name not in PRESET_CAPS:
        raise ValueError(
            f"unknown preset {name!r}; expected one of {sorted(PRESET_CAPS)}"
        )
    return PRESET_CAPS[name]


def balance_sample(
    records: Sequence[PairRecord],
    cap: int,
    seed: int,
    workers: int | None = None,
) -> tuple[list[PairRecord], SamplingPlan, ClusterSizes]:
    """Keep at most `cap` records per cluster; output stays in input order.

    Ranking within a cluster uses stable_hash(seed, image_id), computed
    over record shards in parallel and merged deterministically, so the
    selected id set depends only on (records as a set, cap, seed).
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    for rec in records:
        if rec.cluster == UNCLUSTERED:
            raise ValueError(f"record {rec.image_id!r} has no cluster id")

    if workers is None:
        workers = env_workers()
    workers = max(1, min(workers, len(records))) if records else 1
    shard_size = -(-len(records) // workers) if records else 1
    shards = [
        records[i : i + shard_size] for i in range(0, len(records), shard_size)
    ]

    def rank_shard(shard: Sequence[PairRecord]) -> list[tuple[int, int, str]]:
        return [
            (rec.cluster, stable_hash(seed, rec.image_id), rec.image_id)
            for rec in shard
        ]

    ranked: list[tuple[int, int, str]] = []
    for part in map_ordered(rank_shard, shards, workers=workers):
        ranked.extend(part)

    by_cluster: dict[int, list[tuple[int, str]]] = {}
    for cluster, h, image_id in ranked:
        by_cluster.setdefault(cluster, []).append((h, image_id))

    before = {c: len(group) for c, group in by_cluster.items()}
    selected: set[str] = set()
    for c, group in by_cluster.items():
        group.sort()  # by (hash, image_id): uniform given the seed
        for _, image_id in group[: min(cap, len(group))]:
            selected.add(image_id)

    out = [rec for rec in records if rec.image_id in selected]
    after: dict[int, int] = {}
    for rec in out:
        after[rec.cluster] = after.get(rec.cluster, 0) + 1
    plan = SamplingPlan(
        cap=cap,
        seed=seed,
        per_cluster_quota={c: min(cap, n) for c, n in before.items()},
    )
    return out, plan, ClusterSizes(before, after)
