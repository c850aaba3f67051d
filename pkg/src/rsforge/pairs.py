"""Joining images, retrieval hits, and synthetic texts into pair records,
plus the similarity band gate over the joined stream.

The join is loss-accounting complete: every input image lands in exactly
one bucket — emitted, no_hit, or missing_embedding — and the band gate
then splits emitted into kept and band-rejected, so the final manifest
always balances back to the input count.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

from .filters import FilterVerdict, band_filter
from .retrieval import RetrievalHit
from .store import EmbeddingStore, cosine_sim

UNCLUSTERED = -1


def synthetic_slot_id(image_id: str, slot: int) -> str:
    """Embedding-store id for one image's slot-th synthetic text."""
    return f"{image_id}#syn{slot}"


@dataclass(frozen=True)
class PairRecord:
    image_id: str
    realistic: tuple[tuple[str, float], ...]  # (sentence_id, score), desc
    synthetic: tuple[tuple[str, float], ...]  # (text, score)
    gate_score: float | None
    cluster: int = UNCLUSTERED

    def __post_init__(self):
        scores = [s for _, s in self.realistic]
        if scores != sorted(scores, reverse=True):
            raise ValueError(
                f"pair {self.image_id!r}: realistic hits not sorted by score"
            )
        if bool(self.synthetic) != (self.gate_score is not None):
            raise ValueError(
                f"pair {self.image_id!r}: gate_score must be present exactly "
                "when synthetic texts are"
            )

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "cluster": self.cluster,
            "realistic": [
                {"sentence_id": sid, "score": score} for sid, score in self.realistic
            ],
            "synthetic": [
                {"text": text, "score": score} for text, score in self.synthetic
            ],
            "gate_score": self.gate_score,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PairRecord":
        return cls(
            image_id=obj["image_id"],
            realistic=tuple(
                (h["sentence_id"], float(h["score"])) for h in obj["realistic"]
            ),
            synthetic=tuple(
                (s["text"], float(s["score"])) for s in obj["synthetic"]
            ),
            gate_score=obj.get("gate_score"),
            cluster=int(obj.get("cluster", UNCLUSTERED)),
        )


@dataclass
class JoinStats:
    input_images: int = 0
    emitted: int = 0
    no_hit: int = 0
    missing_embedding: int = 0

    def check(self) -> None:
        total = self.emitted + self.no_hit + self.missing_embedding
        if total != self.input_images:
            raise AssertionError(
                f"join accounting broken: {self.input_images} in, "
                f"{total} across buckets"
            )


def join_pairs(
    image_ids: Sequence[str],
    hits_by_image: Mapping[str, Sequence[RetrievalHit]],
    synthetic_by_image: Mapping[str, Sequence[tuple[int, str]]],
    image_store: EmbeddingStore,
    synthetic_store: EmbeddingStore,
) -> tuple[list[PairRecord], JoinStats]:
    """Join each image's hits and synthetic texts into one PairRecord.

    `synthetic_by_image` maps image id to its successful (slot, text)
    generations; each slot's embedding lives in `synthetic_store` under
    synthetic_slot_id(image_id, slot). Images with no hits, no image
    embedding, or no usable synthetic embedding are counted, not emitted.
    The gate score is the image's cosine against its first synthetic text.
    """
    stats = JoinStats()
    records: list[PairRecord] = []
    for image_id in image_ids:
        stats.input_images += 1
        hits = hits_by_image.get(image_id, ())
        if not hits:
            stats.no_hit += 1
            continue
        if image_id not in image_store:
            stats.missing_embedding += 1
            continue
        image_vec = image_store.row(image_id)
        synthetic: list[tuple[str, float]] = []
        for slot, text in sorted(synthetic_by_image.get(image_id, ())):
            sid = synthetic_slot_id(image_id, slot)
            if sid not in synthetic_store:
                continue
            score = cosine_sim(image_vec, synthetic_store.row(sid))
            synthetic.append((text, score))
        if not synthetic:
            stats.missing_embedding += 1
            continue
        realistic = tuple(
            (h.sentence_id, h.score)
            for h in sorted(hits, key=lambda h: h.rank)
        )
        records.append(
            PairRecord(
                image_id=image_id,
                realistic=realistic,
                synthetic=tuple(synthetic),
                gate_score=synthetic[0][1],
            )
        )
        stats.emitted += 1
    stats.check()
    return records, stats


def apply_band(
    records: Iterable[PairRecord], lo: float = 0.51, hi: float = 0.61
) -> tuple[list[PairRecord], list[FilterVerdict]]:
    """Keep records whose gate score falls inside the closed band."""
    kept: list[PairRecord] = []
    verdicts: list[FilterVerdict] = []
    for rec in records:
        if rec.gate_score is None:
            raise ValueError(f"pair {rec.image_id!r} reached the gate unscored")
        verdict = band_filter(rec.image_id, rec.gate_score, lo, hi)
        verdicts.append(verdict)
        if verdict.kept:
            kept.append(rec)
    return kept, verdicts


def set_clusters(
    records: Iterable[PairRecord], assignments: Mapping[str, int]
) -> list[PairRecord]:
    """Stamp image-cluster indices onto gated records."""
    out = []
    for rec in records:
        if rec.image_id not in assignments:
            raise ValueError(f"pair {rec.image_id!r} has no cluster assignment")
        out.append(replace(rec, cluster=assignments[rec.image_id]))
    return out
