"""Pipeline configuration: strict JSON loading, validation, and hashing.

The config file is a single JSON object.  Every key is checked: unknown
keys anywhere in the tree are rejected so that a typo cannot silently
fall back to a default.  Each stage of the pipeline hashes only the
subtree of settings it actually consumes, which keeps stage caches
valid when unrelated settings change.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from .ioutil import dumps_canonical, env_workers, sha256_text

__all__ = [
    "AugmentConfig",
    "ClusterConfig",
    "ConfigError",
    "DedupConfig",
    "FiltersConfig",
    "JoinConfig",
    "PathsConfig",
    "PipelineConfig",
    "RetrievalConfig",
    "SampleConfig",
    "config_hash",
    "load_config",
    "parse_config",
    "stage_config_hash",
    "stage_config_subtree",
]


class ConfigError(ValueError):
    """A config file is malformed, has unknown keys, or fails validation."""


def _require_mapping(value: Any, where: str) -> dict[str, Any]:
    if not isinstance(value, dict):
        raise ConfigError(f"{where}: expected a JSON object, got {type(value).__name__}")
    return value


def _reject_unknown(data: Mapping[str, Any], allowed: set[str], where: str) -> None:
    extras = sorted(set(data) - allowed)
    if extras:
        raise ConfigError(f"{where}: unknown key(s): {', '.join(extras)}")


def _get_str(data: Mapping[str, Any], key: str, where: str, *, default: str | None = ...) -> Any:
    if key not in data:
        if default is ...:
            raise ConfigError(f"{where}: missing required key '{key}'")
        return default
    value = data[key]
    if not isinstance(value, str) or not value:
        raise ConfigError(f"{where}.{key}: expected a non-empty string")
    return value


def _get_int(data: Mapping[str, Any], key: str, where: str, *, default: int | None = ...,
             minimum: int | None = None) -> Any:
    if key not in data:
        if default is ...:
            raise ConfigError(f"{where}: missing required key '{key}'")
        return default
    value = data[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where}.{key}: expected an integer")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{where}.{key}: must be >= {minimum}, got {value}")
    return value


def _get_float(data: Mapping[str, Any], key: str, where: str, *, default: float = ...,
               minimum: float | None = None, maximum: float | None = None) -> Any:
    if key not in data:
        if default is ...:
            raise ConfigError(f"{where}: missing required key '{key}'")
        return default
    value = data[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}.{key}: expected a number")
    value = float(value)
    if minimum is not None and value < minimum:
        raise ConfigError(f"{where}.{key}: must be >= {minimum}, got {value}")
    if maximum is not None and value > maximum:
        raise ConfigError(f"{where}.{key}: must be <= {maximum}, got {value}")
    return value


@dataclass(frozen=True)
class PathsConfig:
    """Input files and the run directory.

    Relative paths are resolved against the directory containing the
    config file so a run directory can be moved as a unit.
    """

    documents: str
    image_embeddings: str
    sentence_embeddings: str
    captions: str
    tags: str
    base_tags: str
    run_dir: str
    word_vectors: str | None = None

    _KEYS = {
        "documents", "image_embeddings", "sentence_embeddings",
        "captions", "tags", "base_tags", "run_dir", "word_vectors",
    }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], base_dir: Path) -> "PathsConfig":
        where = "paths"
        _reject_unknown(data, cls._KEYS, where)

        def resolve(key: str, *, optional: bool = False) -> str | None:
            raw = _get_str(data, key, where, default=None if optional else ...)
            if raw is None:
                return None
            return str((base_dir / raw).resolve()) if not os.path.isabs(raw) else raw

        return cls(
            documents=resolve("documents"),
            image_embeddings=resolve("image_embeddings"),
            sentence_embeddings=resolve("sentence_embeddings"),
            captions=resolve("captions"),
            tags=resolve("tags"),
            base_tags=resolve("base_tags"),
            run_dir=resolve("run_dir"),
            word_vectors=resolve("word_vectors", optional=True),
        )


@dataclass(frozen=True)
class FiltersConfig:
    """Thresholds for the rule, entropy, perplexity, and band filters."""

    min_short_side: int = 100
    max_aspect: float = 3.0
    min_words: int = 3
    max_words: int = 81
    entropy_min: float = 0.3
    ppl_min: float = 30.0
    ppl_max: float = 200.0
    band_lo: float = 0.51
    band_hi: float = 0.61

    _KEYS = {
        "min_short_side", "max_aspect", "min_words", "max_words",
        "entropy_min", "ppl_min", "ppl_max", "band_lo", "band_hi",
    }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "FiltersConfig":
        where = "filters"
        _reject_unknown(data, cls._KEYS, where)
        cfg = cls(
            min_short_side=_get_int(data, "min_short_side", where, default=100, minimum=1),
            max_aspect=_get_float(data, "max_aspect", where, default=3.0, minimum=1.0),
            min_words=_get_int(data, "min_words", where, default=3, minimum=1),
            max_words=_get_int(data, "max_words", where, default=81, minimum=1),
            entropy_min=_get_float(data, "entropy_min", where, default=0.3, minimum=0.0),
            ppl_min=_get_float(data, "ppl_min", where, default=30.0, minimum=0.0),
            ppl_max=_get_float(data, "ppl_max", where, default=200.0, minimum=0.0),
            band_lo=_get_float(data, "band_lo", where, default=0.51, minimum=-1.0, maximum=1.0),
            band_hi=_get_float(data, "band_hi", where, default=0.61, minimum=-1.0, maximum=1.0),
        )
        if cfg.max_words < cfg.min_words:
            raise ConfigError("filters.max_words: must be >= filters.min_words")
        if cfg.ppl_max < cfg.ppl_min:
            raise ConfigError("filters.ppl_max: must be >= filters.ppl_min")
        if cfg.band_hi < cfg.band_lo:
            raise ConfigError("filters.band_hi: must be >= filters.band_lo")
        return cfg


@dataclass(frozen=True)
class DedupConfig:
    """Cosine thresholds and edge-enumeration mode for deduplication."""

    tau_images: float = 0.96
    tau_sentences: float = 0.95
    mode: str = "exact"

    _KEYS = {"tau_images", "tau_sentences", "mode"}
    _MODES = {"exact", "cluster_pruned"}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DedupConfig":
        where = "dedup"
        _reject_unknown(data, cls._KEYS, where)
        mode = _get_str(data, "mode", where, default="exact")
        if mode not in cls._MODES:
            raise ConfigError(f"{where}.mode: expected one of {sorted(cls._MODES)}, got '{mode}'")
        cfg = cls(
            tau_images=_get_float(data, "tau_images", where, default=0.96, minimum=-1.0, maximum=1.0),
            tau_sentences=_get_float(data, "tau_sentences", where, default=0.95, minimum=-1.0, maximum=1.0),
            mode=mode,
        )
        return cfg


@dataclass(frozen=True)
class ClusterConfig:
    """Spherical k-means sizes for the text and image corpora."""

    k_texts: int
    k_images: int
    max_iters: int = 100
    tol: float = 1e-4

    _KEYS = {"k_texts", "k_images", "max_iters", "tol"}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ClusterConfig":
        where = "cluster"
        _reject_unknown(data, cls._KEYS, where)
        return cls(
            k_texts=_get_int(data, "k_texts", where, minimum=1),
            k_images=_get_int(data, "k_images", where, minimum=1),
            max_iters=_get_int(data, "max_iters", where, default=100, minimum=1),
            tol=_get_float(data, "tol", where, default=1e-4, minimum=0.0),
        )


@dataclass(frozen=True)
class RetrievalConfig:
    """Semantic-neighbour retrieval depth and cluster probe count."""

    k: int = 3
    probes: int = 1

    _KEYS = {"k", "probes"}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RetrievalConfig":
        where = "retrieval"
        _reject_unknown(data, cls._KEYS, where)
        return cls(
            k=_get_int(data, "k", where, default=3, minimum=1),
            probes=_get_int(data, "probes", where, default=1, minimum=1),
        )


@dataclass(frozen=True)
class AugmentConfig:
    """Tag-lexicon size and synthetic-generation client settings."""

    tag_target: int = 8000
    slots: int = 1
    batch_size: int = 16
    max_retries: int = 3
    generator: str = "echo"
    endpoint: str | None = None

    _KEYS = {"tag_target", "slots", "batch_size", "max_retries", "generator", "endpoint"}
    _GENERATORS = {"echo", "http"}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "AugmentConfig":
        where = "augment"
        _reject_unknown(data, cls._KEYS, where)
        generator = _get_str(data, "generator", where, default="echo")
        if generator not in cls._GENERATORS:
            raise ConfigError(
                f"{where}.generator: expected one of {sorted(cls._GENERATORS)}, got '{generator}'"
            )
        endpoint = _get_str(data, "endpoint", where, default=None)
        if generator == "http" and endpoint is None:
            raise ConfigError(f"{where}.endpoint: required when generator is 'http'")
        if generator != "http" and endpoint is not None:
            raise ConfigError(f"{where}.endpoint: only valid when generator is 'http'")
        return cls(
            tag_target=_get_int(data, "tag_target", where, default=8000, minimum=1),
            slots=_get_int(data, "slots", where, default=1, minimum=1),
            batch_size=_get_int(data, "batch_size", where, default=16, minimum=1),
            max_retries=_get_int(data, "max_retries", where, default=3, minimum=1),
            generator=generator,
            endpoint=endpoint,
        )


@dataclass(frozen=True)
class JoinConfig:
    """How synthetic texts are embedded before the similarity gate."""

    synthetic_encoder: str = "hash"

    _KEYS = {"synthetic_encoder"}
    _ENCODERS = {"hash", "lexicon"}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "JoinConfig":
        where = "join"
        _reject_unknown(data, cls._KEYS, where)
        encoder = _get_str(data, "synthetic_encoder", where, default="hash")
        if encoder not in cls._ENCODERS:
            raise ConfigError(
                f"{where}.synthetic_encoder: expected one of {sorted(cls._ENCODERS)}, got '{encoder}'"
            )
        return cls(synthetic_encoder=encoder)


@dataclass(frozen=True)
class SampleConfig:
    """Per-cluster cap for the balanced sampler.

    Give either an explicit `cap` or a `preset` name; a preset resolves
    to its cap at load time.
    """

    cap: int = 20
    preset: str | None = None

    _KEYS = {"cap", "preset"}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SampleConfig":
        where = "sample"
        _reject_unknown(data, cls._KEYS, where)
        if "cap" in data and "preset" in data:
            raise ConfigError(f"{where}: give either 'cap' or 'preset', not both")
        preset = _get_str(data, "preset", where, default=None)
        if preset is not None:
            from .sampler import preset_cap

            try:
                cap = preset_cap(preset)
            except ValueError as exc:
                raise ConfigError(f"{where}.preset: {exc}") from exc
            return cls(cap=cap, preset=preset)
        return cls(cap=_get_int(data, "cap", where, default=20, minimum=1), preset=None)


@dataclass(frozen=True)
class PipelineConfig:
    """Root of the validated configuration tree."""

    paths: PathsConfig
    seed: int = 0
    workers: int = 1
    filters: FiltersConfig = dataclasses.field(default_factory=FiltersConfig)
    dedup: DedupConfig = dataclasses.field(default_factory=DedupConfig)
    cluster: ClusterConfig = dataclasses.field(default_factory=lambda: ClusterConfig(8, 8))
    retrieval: RetrievalConfig = dataclasses.field(default_factory=RetrievalConfig)
    augment: AugmentConfig = dataclasses.field(default_factory=AugmentConfig)
    join: JoinConfig = dataclasses.field(default_factory=JoinConfig)
    sample: SampleConfig = dataclasses.field(default_factory=SampleConfig)

    _KEYS = {
        "paths", "seed", "workers", "filters", "dedup", "cluster",
        "retrieval", "augment", "join", "sample",
    }

    def to_dict(self) -> dict[str, Any]:
        """Plain-dict view used for hashing and the manifest."""
        return dataclasses.asdict(self)

    def effective_workers(self) -> int:
        """Worker count after the RSFORGE_WORKERS env override.

        Workers tune throughput only; no output may depend on them,
        which is why they never enter any config hash.
        """
        return env_workers(default=self.workers)


def parse_config(data: Mapping[str, Any], base_dir: Path | str = ".") -> PipelineConfig:
    """Validate a parsed JSON object into a PipelineConfig."""
    base = Path(base_dir)
    data = _require_mapping(data, "config")
    _reject_unknown(data, PipelineConfig._KEYS, "config")
    if "paths" not in data:
        raise ConfigError("config: missing required key 'paths'")
    if "cluster" not in data:
        raise ConfigError("config: missing required key 'cluster'")
    cfg = PipelineConfig(
        paths=PathsConfig.from_dict(_require_mapping(data["paths"], "paths"), base),
        seed=_get_int(data, "seed", "config", default=0, minimum=0),
        workers=_get_int(data, "workers", "config", default=1, minimum=1),
        filters=FiltersConfig.from_dict(_require_mapping(data.get("filters", {}), "filters")),
        dedup=DedupConfig.from_dict(_require_mapping(data.get("dedup", {}), "dedup")),
        cluster=ClusterConfig.from_dict(_require_mapping(data["cluster"], "cluster")),
        retrieval=RetrievalConfig.from_dict(_require_mapping(data.get("retrieval", {}), "retrieval")),
        augment=AugmentConfig.from_dict(_require_mapping(data.get("augment", {}), "augment")),
        join=JoinConfig.from_dict(_require_mapping(data.get("join", {}), "join")),
        sample=SampleConfig.from_dict(_require_mapping(data.get("sample", {}), "sample")),
    )
    if cfg.retrieval.probes > cfg.cluster.k_texts:
        raise ConfigError(
            f"retrieval.probes: must be <= cluster.k_texts "
            f"({cfg.retrieval.probes} > {cfg.cluster.k_texts})"
        )
    if cfg.join.synthetic_encoder == "lexicon" and cfg.paths.word_vectors is None:
        raise ConfigError(
            "join.synthetic_encoder: 'lexicon' requires paths.word_vectors"
        )
    return cfg


def load_config(path: str | Path) -> PipelineConfig:
    """Load and validate a JSON config file.

    Relative paths inside the file resolve against the file's directory.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return parse_config(data, base_dir=path.parent)


def config_hash(config: PipelineConfig) -> str:
    """Hash of the full config tree (paths excluded, workers excluded).

    The manifest must be byte-identical across runs from different
    working directories and worker counts, so only settings that can
    change outputs participate.
    """
    blob = config.to_dict()
    del blob["paths"]
    del blob["workers"]
    return sha256_text(dumps_canonical(blob))


# Which config keys each stage consumes.  A stage's cache key uses only
# this subtree, so edits to unrelated settings never invalidate it.
_STAGE_SUBTREES: dict[str, tuple[tuple[str, ...], ...]] = {
    "extract": (),
    "filter_images": (("filters", "min_short_side"), ("filters", "max_aspect")),
    "dedup_images": (("dedup", "tau_images"), ("dedup", "mode")),
    "sentence_rules": (("filters", "min_words"), ("filters", "max_words")),
    "sentence_entropy": (("filters", "entropy_min"),),
    "sentence_perplexity": (("filters", "ppl_min"), ("filters", "ppl_max")),
    "dedup_sentences": (("dedup", "tau_sentences"), ("dedup", "mode")),
    "cluster_texts": (
        ("cluster", "k_texts"), ("cluster", "max_iters"), ("cluster", "tol"), ("seed",),
    ),
    "retrieve": (("retrieval", "k"), ("retrieval", "probes")),
    "augment": (
        ("augment", "tag_target"), ("augment", "slots"), ("augment", "batch_size"),
        ("augment", "max_retries"), ("augment", "generator"), ("augment", "endpoint"),
    ),
    "join": (("join", "synthetic_encoder"),),
    "gate": (("filters", "band_lo"), ("filters", "band_hi")),
    "cluster_images": (
        ("cluster", "k_images"), ("cluster", "max_iters"), ("cluster", "tol"), ("seed",),
    ),
    "sample": (("sample", "cap"), ("seed",)),
}

STAGE_NAMES = tuple(_STAGE_SUBTREES)


def stage_config_subtree(config: PipelineConfig, stage: str) -> dict[str, Any]:
    """The nested dict of settings a stage's cache key depends on."""
    if stage not in _STAGE_SUBTREES:
        raise ValueError(f"unknown stage '{stage}'")
    blob = config.to_dict()
    subtree: dict[str, Any] = {}
    for key_path in _STAGE_SUBTREES[stage]:
        node_in, node_out = blob, subtree
        for key in key_path[:-1]:
            node_in = node_in[key]
            node_out = node_out.setdefault(key, {})
        node_out[key_path[-1]] = node_in[key_path[-1]]
    return subtree


def stage_config_hash(config: PipelineConfig, stage: str) -> str:
    return sha256_text(dumps_canonical(stage_config_subtree(config, stage)))
