"""Stage orchestration: caching, conservation checks, manifests, reports.

The pipeline is a fixed sequence of stages.  Each stage reads the files
of earlier stages (or external inputs), writes its outputs under
``run_dir/stages/<name>/``, and records a marker with the hashes of
everything it consumed and produced.  A stage whose marker still
matches is skipped, which makes interrupted runs resumable and repeat
runs cheap.

Two artifacts summarize a run:

* ``manifest.json`` — deterministic: config hash, per-stage counts and
  content digests.  Two runs with the same config and inputs produce
  byte-identical manifests.
* ``run_report.json`` — operational: adds wall-clock times, cache hits,
  worker count, and failure details.  Not expected to be stable.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from . import augment as aug
from .cluster import kmeans_fit, load_model, model_paths, save_model
from .config import PipelineConfig, config_hash, stage_config_hash
from .corpus import ImageRecord, SentenceRecord, extract, parse_documents
from .dedup import dedup_store
from .encoders import HashTextEncoder, LexiconTextEncoder, encode_texts
from .filters import (
    band_gate,
    build_corpus_stats,
    entropy_filter,
    image_rule_filter,
    perplexity_filter,
    sentence_rule_filter,
    train_ngram_lm,
)
from .ioutil import dumps_canonical, ensure_dir, map_ordered, read_jsonl, sha256_file, write_jsonl
from .pairs import PairRecord, apply_band, join_pairs, set_clusters, synthetic_slot_id
from .retrieval import RetrievalHit, check_coverage, hierarchical_retrieve, retrieval_record
from .sampler import balance_sample
from .store import EmbeddingStore, normalize, read_store

__all__ = [
    "PipelineError",
    "RunReport",
    "STAGE_ORDER",
    "StageReport",
    "manifest_path",
    "run_pipeline",
    "stage_dir",
]

log = logging.getLogger("rsforge.pipeline")


class PipelineError(RuntimeError):
    """A stage could not run: missing input, invalid data, or internal fault."""


# --------------------------------------------------------------------------
# Run layout


def stage_dir(run_dir: str | Path, stage: str) -> Path:
    return Path(run_dir) / "stages" / stage


def _spath(run_dir: Path, stage: str, name: str) -> Path:
    return stage_dir(run_dir, stage) / name


def manifest_path(run_dir: str | Path) -> Path:
    return Path(run_dir) / "manifest.json"


def report_path(run_dir: str | Path) -> Path:
    return Path(run_dir) / "run_report.json"


# --------------------------------------------------------------------------
# Reports


@dataclass
class StageReport:
    stage: str
    counts: dict[str, Any]
    wall_s: float
    cached: bool

    def to_json(self) -> dict[str, Any]:
        return {
            "stage": self.stage,
            "counts": self.counts,
            "wall_s": round(self.wall_s, 6),
            "cached": self.cached,
        }


@dataclass
class RunReport:
    config_hash: str
    seed: int
    workers: int
    stages: list[StageReport] = field(default_factory=list)
    status: str = "completed"
    failed_stage: str | None = None
    error: str | None = None
    final_pairs: int | None = None

    def to_json(self) -> dict[str, Any]:
        blob: dict[str, Any] = {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "workers": self.workers,
            "status": self.status,
            "stages": [s.to_json() for s in self.stages],
        }
        if self.failed_stage is not None:
            blob["failed_stage"] = self.failed_stage
        if self.error is not None:
            blob["error"] = self.error
        if self.final_pairs is not None:
            blob["final_pairs"] = self.final_pairs
        return blob


# --------------------------------------------------------------------------
# Shared stage helpers


@dataclass
class StageContext:
    config: PipelineConfig
    run_dir: Path
    dir: Path
    inputs: dict[str, Path]


def _write_records(path: Path, records) -> int:
    return write_jsonl(path, (dataclasses.asdict(r) for r in records))


def _load_images(path: Path) -> list[ImageRecord]:
    return [ImageRecord(**row) for row in read_jsonl(path)]


def _load_sentences(path: Path) -> list[SentenceRecord]:
    return [SentenceRecord(**row) for row in read_jsonl(path)]


def _load_pairs(path: Path) -> list[PairRecord]:
    return [PairRecord.from_json(row) for row in read_jsonl(path)]


def _load_normalized_store(path: Path) -> EmbeddingStore:
    store = read_store(path)
    return store if store.normalized else normalize(store)


def _subset_store(store: EmbeddingStore, ids, stage: str, path: Path) -> EmbeddingStore:
    missing = [i for i in ids if i not in store]
    if missing:
        raise PipelineError(
            f"stage '{stage}': {len(missing)} id(s) missing from embeddings "
            f"{path} (first: {missing[0]!r})"
        )
    return store.subset(ids)


def _filter_stage(records, verdict_fn, kept_path: Path, verdicts_path: Path):
    """Run a per-record filter; persist survivors and all verdicts."""
    kept, verdicts, rejected = [], [], {}
    for rec in records:
        verdict = verdict_fn(rec)
        verdicts.append(verdict.to_json())
        if verdict.kept:
            kept.append(rec)
        else:
            rejected[verdict.reason] = rejected.get(verdict.reason, 0) + 1
    _write_records(kept_path, kept)
    write_jsonl(verdicts_path, verdicts)
    counts = {
        "input": len(verdicts),
        "kept": len(kept),
        "rejected": dict(sorted(rejected.items())),
    }
    return counts


def _write_json(path: Path, blob: Any) -> None:
    path.write_text(dumps_canonical(blob) + "\n", encoding="utf-8")


def _dedup_result(ctx: StageContext, store: EmbeddingStore, tau: float):
    if store.count >= 2 and ctx.config.dedup.mode == "cluster_pruned":
        k = max(1, math.isqrt(store.count))
        members = kmeans_fit(store, k=k, seed=ctx.config.seed, spherical=True).members
        return dedup_store(store, tau, mode="cluster_pruned", cluster_members=members)
    return dedup_store(store, tau, mode="exact")


# --------------------------------------------------------------------------
# Stage bodies.  Each returns (counts, [output filenames]).


def _run_extract(ctx: StageContext):
    errors: list[tuple[int, str]] = []
    docs = list(
        parse_documents(ctx.inputs["documents"], on_error=lambda n, m: errors.append((n, m)))
    )
    for line_no, message in errors:
        log.warning("documents line %d skipped: %s", line_no, message)
    images, sentences, stats = extract(docs)
    _write_records(ctx.dir / "images.jsonl", images)
    _write_records(ctx.dir / "sentences.jsonl", sentences)
    counts = {
        "input": len(docs) + len(errors),
        "kept": len(docs),
        "rejected": {"malformed": len(errors)} if errors else {},
        "extra": {"images": stats.images, "sentences": stats.sentences},
    }
    return counts, ["images.jsonl", "sentences.jsonl"]


def _run_filter_images(ctx: StageContext):
    f = ctx.config.filters
    counts = _filter_stage(
        _load_images(ctx.inputs["images"]),
        lambda rec: image_rule_filter(rec, f.min_short_side, f.max_aspect),
        ctx.dir / "kept_images.jsonl",
        ctx.dir / "verdicts.jsonl",
    )
    return counts, ["kept_images.jsonl", "verdicts.jsonl"]


def _run_dedup_images(ctx: StageContext):
    images = _load_images(ctx.inputs["images"])
    store = _load_normalized_store(ctx.inputs["embeddings"])
    sub = _subset_store(store, [r.image_id for r in images], "dedup_images", ctx.inputs["embeddings"])
    result = _dedup_result(ctx, sub, ctx.config.dedup.tau_images)
    kept_ids = set(result.kept_ids)
    kept = [r for r in images if r.image_id in kept_ids]
    _write_records(ctx.dir / "kept_images.jsonl", kept)
    _write_json(
        ctx.dir / "components.json",
        {
            "tau": ctx.config.dedup.tau_images,
            "mode": ctx.config.dedup.mode,
            "components": [list(c) for c in result.components],
            "representative": dict(result.representative),
        },
    )
    counts = {
        "input": len(images),
        "kept": len(kept),
        "rejected": {"duplicate": result.removed_count()} if result.removed_count() else {},
    }
    return counts, ["kept_images.jsonl", "components.json"]


def _run_sentence_rules(ctx: StageContext):
    f = ctx.config.filters
    counts = _filter_stage(
        _load_sentences(ctx.inputs["sentences"]),
        lambda rec: sentence_rule_filter(rec, f.min_words, f.max_words),
        ctx.dir / "kept_sentences.jsonl",
        ctx.dir / "verdicts.jsonl",
    )
    return counts, ["kept_sentences.jsonl", "verdicts.jsonl"]


def _run_sentence_entropy(ctx: StageContext):
    sentences = _load_sentences(ctx.inputs["sentences"])
    stats = build_corpus_stats(s.text for s in sentences)
    counts = _filter_stage(
        sentences,
        lambda rec: entropy_filter(rec, stats, ctx.config.filters.entropy_min),
        ctx.dir / "kept_sentences.jsonl",
        ctx.dir / "verdicts.jsonl",
    )
    _write_json(
        ctx.dir / "corpus_stats.json",
        {"total_tokens": stats.total_tokens, "vocab_size": stats.vocab_size},
    )
    return counts, ["kept_sentences.jsonl", "verdicts.jsonl", "corpus_stats.json"]


def _run_sentence_perplexity(ctx: StageContext):
    sentences = _load_sentences(ctx.inputs["sentences"])
    if not sentences:
        raise PipelineError(
            "stage 'sentence_perplexity': no sentences survive the entropy filter"
        )
    lm = train_ngram_lm(s.text for s in sentences)
    f = ctx.config.filters
    counts = _filter_stage(
        sentences,
        lambda rec: perplexity_filter(rec, lm, f.ppl_min, f.ppl_max),
        ctx.dir / "kept_sentences.jsonl",
        ctx.dir / "verdicts.jsonl",
    )
    return counts, ["kept_sentences.jsonl", "verdicts.jsonl"]


def _run_dedup_sentences(ctx: StageContext):
    sentences = _load_sentences(ctx.inputs["sentences"])
    store = _load_normalized_store(ctx.inputs["embeddings"])
    sub = _subset_store(
        store, [s.sentence_id for s in sentences], "dedup_sentences", ctx.inputs["embeddings"]
    )
    result = _dedup_result(ctx, sub, ctx.config.dedup.tau_sentences)
    kept_ids = set(result.kept_ids)
    kept = [s for s in sentences if s.sentence_id in kept_ids]
    _write_records(ctx.dir / "kept_sentences.jsonl", kept)
    _write_json(
        ctx.dir / "components.json",
        {
            "tau": ctx.config.dedup.tau_sentences,
            "mode": ctx.config.dedup.mode,
            "components": [list(c) for c in result.components],
            "representative": dict(result.representative),
        },
    )
    counts = {
        "input": len(sentences),
        "kept": len(kept),
        "rejected": {"duplicate": result.removed_count()} if result.removed_count() else {},
    }
    return counts, ["kept_sentences.jsonl", "components.json"]


def _run_cluster_texts(ctx: StageContext):
    sentences = _load_sentences(ctx.inputs["sentences"])
    store = _load_normalized_store(ctx.inputs["embeddings"])
    sub = _subset_store(
        store, [s.sentence_id for s in sentences], "cluster_texts", ctx.inputs["embeddings"]
    )
    c = ctx.config.cluster
    if c.k_texts > sub.count:
        raise PipelineError(
            f"stage 'cluster_texts': k_texts={c.k_texts} exceeds sentence count {sub.count}"
        )
    model = kmeans_fit(
        sub, k=c.k_texts, max_iters=c.max_iters, tol=c.tol, seed=ctx.config.seed, spherical=True
    )
    centroids_path, assignments_path = model_paths(ctx.dir)
    save_model(model, centroids_path, assignments_path)
    _write_json(
        ctx.dir / "model.json",
        {
            "k": model.k,
            "inertia": model.inertia,
            "iterations": len(model.inertia_history),
            "spherical": model.spherical,
        },
    )
    counts = {
        "input": len(sentences),
        "kept": len(sentences),
        "rejected": {},
        "extra": {"k": model.k, "inertia": model.inertia},
    }
    return counts, [centroids_path.name, assignments_path.name, "model.json"]


def _run_retrieve(ctx: StageContext):
    images = _load_images(ctx.inputs["images"])
    sentences = _load_sentences(ctx.inputs["sentences"])
    image_store = _load_normalized_store(ctx.inputs["image_embeddings"])
    image_sub = _subset_store(
        image_store, [r.image_id for r in images], "retrieve", ctx.inputs["image_embeddings"]
    )
    text_store = _load_normalized_store(ctx.inputs["sentence_embeddings"])
    text_sub = _subset_store(
        text_store,
        [s.sentence_id for s in sentences],
        "retrieve",
        ctx.inputs["sentence_embeddings"],
    )
    if image_sub.count and text_sub.count and image_sub.dim != text_sub.dim:
        raise PipelineError(
            f"stage 'retrieve': image embedding dim {image_sub.dim} != "
            f"sentence embedding dim {text_sub.dim}"
        )
    model = load_model(ctx.inputs["centroids"], ctx.inputs["assignments"])
    check_coverage(text_sub, model)
    r = ctx.config.retrieval

    def one(rec: ImageRecord) -> dict:
        hits = hierarchical_retrieve(
            image_sub.row(rec.image_id), text_sub, model, k=r.k, probes=r.probes
        )
        return retrieval_record(rec.image_id, hits)

    rows = map_ordered(one, images, ctx.config.effective_workers())
    write_jsonl(ctx.dir / "retrieval.jsonl", rows)
    with_hits = sum(1 for row in rows if row["hits"])
    counts = {
        "input": len(images),
        "kept": len(images),
        "rejected": {},
        "extra": {"with_hits": with_hits, "hits_total": sum(len(r["hits"]) for r in rows)},
    }
    return counts, ["retrieval.jsonl"]


def _generation_client(ctx: StageContext) -> aug.GenerationClient:
    if ctx.config.augment.generator == "http":
        return aug.HttpGenerationClient(ctx.config.augment.endpoint)
    return aug.EchoClient()


def _run_augment(ctx: StageContext):
    a = ctx.config.augment
    captions = aug.read_captions(ctx.inputs["captions"])
    image_tags = aug.read_image_tags(ctx.inputs["tags"])
    base_tags = aug.read_base_tags(ctx.inputs["base_tags"])
    sentences = _load_sentences(ctx.inputs["sentences"])
    text_of = {s.sentence_id: s.text for s in sentences}

    lexicon = aug.expand_tag_lexicon(base_tags, (s.text for s in sentences), a.tag_target)
    (ctx.dir / "lexicon.txt").write_text(
        "".join(tag + "\n" for tag in lexicon.tags), encoding="utf-8"
    )

    requests: list[aug.GenerationRequest] = []
    images_seen = 0
    for row in read_jsonl(ctx.inputs["retrieval"]):
        image_id, hits = row["image_id"], row["hits"]
        if not hits:
            continue
        images_seen += 1
        if image_id not in captions:
            raise PipelineError(
                f"stage 'augment': no caption for image {image_id!r} in {ctx.inputs['captions']}"
            )
        tags = [t for t in image_tags.get(image_id, []) if t in lexicon]
        for hit in hits[: a.slots]:
            raw = text_of.get(hit["sentence_id"])
            if raw is None:
                raise PipelineError(
                    f"stage 'augment': retrieval hit {hit['sentence_id']!r} has no sentence text"
                )
            requests.append(aug.assemble_prompt(image_id, raw, captions[image_id], tags))

    results = aug.generate_synthetic(
        requests, _generation_client(ctx), max_retries=a.max_retries, batch=a.batch_size
    )
    write_jsonl(ctx.dir / "synthetic.jsonl", (r.to_json() for r in results))
    ok = sum(1 for r in results if r.ok)
    counts = {
        "input": len(requests),
        "kept": ok,
        "rejected": {"generation_failed": len(requests) - ok} if ok < len(requests) else {},
        "extra": {"images": images_seen, "lexicon_size": len(lexicon)},
    }
    return counts, ["synthetic.jsonl", "lexicon.txt"]


def _hits_by_image(retrieval_path: Path) -> dict[str, list[RetrievalHit]]:
    out: dict[str, list[RetrievalHit]] = {}
    for row in read_jsonl(retrieval_path):
        out[row["image_id"]] = [
            RetrievalHit(h["sentence_id"], float(h["score"]), -1, int(h["rank"]))
            for h in row["hits"]
        ]
    return out


def _synthetic_by_image(synthetic_path: Path) -> dict[str, list[tuple[int, str]]]:
    """Slot index = position among the image's generation rows."""
    slots_seen: dict[str, int] = {}
    out: dict[str, list[tuple[int, str]]] = {}
    for row in read_jsonl(synthetic_path):
        image_id = row["image_id"]
        slot = slots_seen.get(image_id, 0)
        slots_seen[image_id] = slot + 1
        if row["status"] == aug.STATUS_OK:
            out.setdefault(image_id, []).append((slot, row["text"]))
    return out


def _synthetic_encoder(ctx: StageContext, dim: int):
    if ctx.config.join.synthetic_encoder == "lexicon":
        word_store = _load_normalized_store(ctx.inputs["word_vectors"])
        if word_store.dim != dim:
            raise PipelineError(
                f"stage 'join': word-vector dim {word_store.dim} != image embedding dim {dim}"
            )
        return LexiconTextEncoder(word_store)
    return HashTextEncoder(dim)


def _run_join(ctx: StageContext):
    images = _load_images(ctx.inputs["images"])
    image_ids = [r.image_id for r in images]
    image_store = _load_normalized_store(ctx.inputs["image_embeddings"])
    image_sub = _subset_store(image_store, image_ids, "join", ctx.inputs["image_embeddings"])
    hits = _hits_by_image(ctx.inputs["retrieval"])
    synthetic = _synthetic_by_image(ctx.inputs["synthetic"])

    encoder = _synthetic_encoder(ctx, image_sub.dim)
    to_encode = [
        (synthetic_slot_id(image_id, slot), text)
        for image_id in image_ids
        for slot, text in synthetic.get(image_id, [])
    ]
    syn_store, skipped = encode_texts(encoder, to_encode)
    for slot_id in skipped:
        log.warning("join: synthetic text %s could not be encoded", slot_id)

    records, stats = join_pairs(image_ids, hits, synthetic, image_sub, syn_store)
    stats.check()
    write_jsonl(ctx.dir / "pairs.jsonl", (r.to_json() for r in records))
    _write_json(
        ctx.dir / "join_stats.json",
        {
            "input_images": stats.input_images,
            "emitted": stats.emitted,
            "no_hit": stats.no_hit,
            "missing_embedding": stats.missing_embedding,
            "unencodable_synthetic": len(skipped),
        },
    )
    rejected: dict[str, int] = {}
    if stats.no_hit:
        rejected["no_hit"] = stats.no_hit
    if stats.missing_embedding:
        rejected["missing_embedding"] = stats.missing_embedding
    counts = {"input": stats.input_images, "kept": stats.emitted, "rejected": rejected}
    return counts, ["pairs.jsonl", "join_stats.json"]


def _run_gate(ctx: StageContext):
    records = _load_pairs(ctx.inputs["pairs"])
    f = ctx.config.filters
    kept, verdicts = apply_band(records, lo=f.band_lo, hi=f.band_hi)
    write_jsonl(ctx.dir / "pairs.jsonl", (r.to_json() for r in kept))
    write_jsonl(ctx.dir / "verdicts.jsonl", (v.to_json() for v in verdicts))
    rejected = len(records) - len(kept)
    counts = {
        "input": len(records),
        "kept": len(kept),
        "rejected": {"band": rejected} if rejected else {},
    }
    return counts, ["pairs.jsonl", "verdicts.jsonl"]


def _run_cluster_images(ctx: StageContext):
    records = _load_pairs(ctx.inputs["pairs"])
    c = ctx.config.cluster
    if c.k_images > len(records):
        raise PipelineError(
            f"stage 'cluster_images': k_images={c.k_images} exceeds surviving pair count "
            f"{len(records)}"
        )
    image_store = _load_normalized_store(ctx.inputs["image_embeddings"])
    sub = _subset_store(
        image_store, [r.image_id for r in records], "cluster_images", ctx.inputs["image_embeddings"]
    )
    model = kmeans_fit(
        sub, k=c.k_images, max_iters=c.max_iters, tol=c.tol, seed=ctx.config.seed, spherical=True
    )
    stamped = set_clusters(records, model.assignments)
    write_jsonl(ctx.dir / "pairs.jsonl", (r.to_json() for r in stamped))
    centroids_path, assignments_path = model_paths(ctx.dir)
    save_model(model, centroids_path, assignments_path)
    _write_json(
        ctx.dir / "model.json",
        {
            "k": model.k,
            "inertia": model.inertia,
            "iterations": len(model.inertia_history),
            "spherical": model.spherical,
        },
    )
    counts = {
        "input": len(records),
        "kept": len(records),
        "rejected": {},
        "extra": {"k": model.k, "inertia": model.inertia},
    }
    return counts, ["pairs.jsonl", centroids_path.name, assignments_path.name, "model.json"]


def _run_sample(ctx: StageContext):
    records = _load_pairs(ctx.inputs["pairs"])
    sampled, plan, sizes = balance_sample(
        records,
        cap=ctx.config.sample.cap,
        seed=ctx.config.seed,
        workers=ctx.config.effective_workers(),
    )
    write_jsonl(ctx.dir / "pairs.jsonl", (r.to_json() for r in sampled))
    _write_json(
        ctx.dir / "plan.json",
        {
            "cap": plan.cap,
            "seed": plan.seed,
            "per_cluster_quota": {str(c): q for c, q in sorted(plan.per_cluster_quota.items())},
        },
    )
    _write_json(ctx.dir / "cluster_sizes.json", sizes.rows())
    dropped = len(records) - len(sampled)
    counts = {
        "input": len(records),
        "kept": len(sampled),
        "rejected": {"over_cap": dropped} if dropped else {},
    }
    return counts, ["pairs.jsonl", "plan.json", "cluster_sizes.json"]


# --------------------------------------------------------------------------
# Stage wiring

InputsFn = Callable[[PipelineConfig, Path], dict[str, Path]]
RunFn = Callable[[StageContext], tuple[dict, list[str]]]

_STAGES: dict[str, tuple[InputsFn, RunFn]] = {
    "extract": (
        lambda cfg, rd: {"documents": Path(cfg.paths.documents)},
        _run_extract,
    ),
    "filter_images": (
        lambda cfg, rd: {"images": _spath(rd, "extract", "images.jsonl")},
        _run_filter_images,
    ),
    "dedup_images": (
        lambda cfg, rd: {
            "images": _spath(rd, "filter_images", "kept_images.jsonl"),
            "embeddings": Path(cfg.paths.image_embeddings),
        },
        _run_dedup_images,
    ),
    "sentence_rules": (
        lambda cfg, rd: {"sentences": _spath(rd, "extract", "sentences.jsonl")},
        _run_sentence_rules,
    ),
    "sentence_entropy": (
        lambda cfg, rd: {"sentences": _spath(rd, "sentence_rules", "kept_sentences.jsonl")},
        _run_sentence_entropy,
    ),
    "sentence_perplexity": (
        lambda cfg, rd: {"sentences": _spath(rd, "sentence_entropy", "kept_sentences.jsonl")},
        _run_sentence_perplexity,
    ),
    "dedup_sentences": (
        lambda cfg, rd: {
            "sentences": _spath(rd, "sentence_perplexity", "kept_sentences.jsonl"),
            "embeddings": Path(cfg.paths.sentence_embeddings),
        },
        _run_dedup_sentences,
    ),
    "cluster_texts": (
        lambda cfg, rd: {
            "sentences": _spath(rd, "dedup_sentences", "kept_sentences.jsonl"),
            "embeddings": Path(cfg.paths.sentence_embeddings),
        },
        _run_cluster_texts,
    ),
    "retrieve": (
        lambda cfg, rd: {
            "images": _spath(rd, "dedup_images", "kept_images.jsonl"),
            "sentences": _spath(rd, "dedup_sentences", "kept_sentences.jsonl"),
            "image_embeddings": Path(cfg.paths.image_embeddings),
            "sentence_embeddings": Path(cfg.paths.sentence_embeddings),
            "centroids": _spath(rd, "cluster_texts", "centroids.rseb"),
            "assignments": _spath(rd, "cluster_texts", "assignments.jsonl"),
        },
        _run_retrieve,
    ),
    "augment": (
        lambda cfg, rd: {
            "retrieval": _spath(rd, "retrieve", "retrieval.jsonl"),
            "sentences": _spath(rd, "dedup_sentences", "kept_sentences.jsonl"),
            "captions": Path(cfg.paths.captions),
            "tags": Path(cfg.paths.tags),
            "base_tags": Path(cfg.paths.base_tags),
        },
        _run_augment,
    ),
    "join": (
        lambda cfg, rd: {
            "images": _spath(rd, "dedup_images", "kept_images.jsonl"),
            "retrieval": _spath(rd, "retrieve", "retrieval.jsonl"),
            "synthetic": _spath(rd, "augment", "synthetic.jsonl"),
            "image_embeddings": Path(cfg.paths.image_embeddings),
            **(
                {"word_vectors": Path(cfg.paths.word_vectors)}
                if cfg.join.synthetic_encoder == "lexicon"
                else {}
            ),
        },
        _run_join,
    ),
    "gate": (
        lambda cfg, rd: {"pairs": _spath(rd, "join", "pairs.jsonl")},
        _run_gate,
    ),
    "cluster_images": (
        lambda cfg, rd: {
            "pairs": _spath(rd, "gate", "pairs.jsonl"),
            "image_embeddings": Path(cfg.paths.image_embeddings),
        },
        _run_cluster_images,
    ),
    "sample": (
        lambda cfg, rd: {"pairs": _spath(rd, "cluster_images", "pairs.jsonl")},
        _run_sample,
    ),
}

STAGE_ORDER = tuple(_STAGES)


# --------------------------------------------------------------------------
# Runner


def _check_conservation(stage: str, counts: dict) -> None:
    rejected = sum(counts.get("rejected", {}).values())
    if counts["input"] != counts["kept"] + rejected:
        raise PipelineError(
            f"stage '{stage}': count conservation violated: "
            f"input={counts['input']} kept={counts['kept']} rejected={rejected}"
        )


def _cache_hit(
    marker_file: Path, directory: Path, stage: str, settings_hash: str, inputs: dict[str, str]
) -> dict | None:
    if not marker_file.is_file():
        return None
    try:
        marker = json.loads(marker_file.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError):
        return None
    if (
        marker.get("stage") != stage
        or marker.get("settings_hash") != settings_hash
        or marker.get("inputs") != inputs
    ):
        return None
    outputs = marker.get("outputs")
    if not isinstance(outputs, dict):
        return None
    for name, digest in outputs.items():
        path = directory / name
        if not path.is_file() or sha256_file(path) != digest:
            return None
    return marker


def run_pipeline(
    config: PipelineConfig,
    *,
    upto: str | None = None,
    force: bool = False,
) -> RunReport:
    """Run the pipeline (optionally only through stage `upto`).

    Completed stages whose inputs and settings are unchanged are reused.
    On stage failure a partial run report is written and PipelineError
    is raised; rerunning after the fix resumes from the failed stage.
    """
    if upto is not None and upto not in _STAGES:
        raise ValueError(f"unknown stage '{upto}'")
    run_dir = Path(config.paths.run_dir)
    ensure_dir(run_dir)
    report = RunReport(
        config_hash=config_hash(config),
        seed=config.seed,
        workers=config.effective_workers(),
    )
    manifest_stages: list[dict[str, Any]] = []
    final_kept: int | None = None

    for name in STAGE_ORDER:
        inputs_fn, run_fn = _STAGES[name]
        inputs = inputs_fn(config, run_dir)
        for label, path in inputs.items():
            if not Path(path).is_file():
                message = f"stage '{name}': missing input file: {path}"
                _finish_failed(run_dir, report, name, message)
                raise PipelineError(message)
        digests = {label: sha256_file(path) for label, path in sorted(inputs.items())}
        settings_hash = stage_config_hash(config, name)
        directory = stage_dir(run_dir, name)
        marker_file = directory / "stage.json"

        marker = None if force else _cache_hit(marker_file, directory, name, settings_hash, digests)
        if marker is not None:
            counts, outputs = marker["counts"], marker["outputs"]
            report.stages.append(StageReport(name, counts, 0.0, cached=True))
            log.info("stage %-19s cached (kept %s)", name, counts.get("kept"))
        else:
            ensure_dir(directory)
            started = time.perf_counter()
            try:
                counts, files = run_fn(StageContext(config, run_dir, directory, inputs))
                _check_conservation(name, counts)
            except PipelineError as exc:
                _finish_failed(run_dir, report, name, str(exc))
                raise
            except Exception as exc:  # surface with stage context, keep traceback
                message = f"stage '{name}' failed: {exc}"
                _finish_failed(run_dir, report, name, message)
                raise PipelineError(message) from exc
            wall = time.perf_counter() - started
            outputs = {f: sha256_file(directory / f) for f in sorted(files)}
            _write_json(
                marker_file,
                {
                    "stage": name,
                    "settings_hash": settings_hash,
                    "inputs": digests,
                    "outputs": outputs,
                    "counts": counts,
                    "wall_s": round(wall, 6),
                },
            )
            report.stages.append(StageReport(name, counts, wall, cached=False))
            log.info(
                "stage %-19s input %s kept %s (%.2fs)",
                name,
                counts.get("input"),
                counts.get("kept"),
                wall,
            )

        manifest_stages.append(
            {
                "stage": name,
                "settings_hash": settings_hash,
                "inputs": digests,
                "outputs": outputs,
                "counts": counts,
            }
        )
        if name == "sample":
            final_kept = counts["kept"]
        if name == upto:
            break

    if upto is None:
        report.final_pairs = final_kept
        manifest = {
            "config_hash": report.config_hash,
            "seed": report.seed,
            "final_pairs": final_kept,
            "stages": manifest_stages,
        }
        manifest_path(run_dir).write_text(dumps_canonical(manifest) + "\n", encoding="utf-8")
    report.status = "completed"
    _write_json(report_path(run_dir), report.to_json())
    return report


def _finish_failed(run_dir: Path, report: RunReport, stage: str, error: str) -> None:
    report.status = "failed"
    report.failed_stage = stage
    report.error = error
    _write_json(report_path(run_dir), report.to_json())
