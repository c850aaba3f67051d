"""Tests for config parsing, validation, and per-stage settings hashing."""

from __future__ import annotations

import json

import pytest

from rsforge.config import (
    STAGE_NAMES,
    ConfigError,
    PipelineConfig,
    config_hash,
    load_config,
    parse_config,
    stage_config_hash,
    stage_config_subtree,
)


def minimal(**overrides):
    data = {
        "paths": {
            "documents": "docs.jsonl",
            "image_embeddings": "img.rseb",
            "sentence_embeddings": "sent.rseb",
            "captions": "captions.jsonl",
            "tags": "tags.jsonl",
            "base_tags": "base_tags.txt",
            "run_dir": "run",
        },
        "cluster": {"k_texts": 8, "k_images": 8},
    }
    data.update(overrides)
    return data


class TestParsing:
    def test_minimal_config_parses_with_defaults(self):
        cfg = parse_config(minimal(), base_dir="/data")
        assert cfg.seed == 0
        assert cfg.workers == 1
        assert cfg.filters.min_short_side == 100
        assert cfg.filters.max_aspect == 3.0
        assert cfg.filters.min_words == 3
        assert cfg.filters.max_words == 81
        assert cfg.filters.entropy_min == 0.3
        assert cfg.filters.ppl_min == 30.0
        assert cfg.filters.ppl_max == 200.0
        assert cfg.filters.band_lo == 0.51
        assert cfg.filters.band_hi == 0.61
        assert cfg.dedup.tau_images == 0.96
        assert cfg.dedup.tau_sentences == 0.95
        assert cfg.dedup.mode == "exact"
        assert cfg.retrieval.k == 3
        assert cfg.retrieval.probes == 1
        assert cfg.augment.tag_target == 8000
        assert cfg.join.synthetic_encoder == "hash"
        assert cfg.sample.cap == 20

    def test_relative_paths_resolve_against_base_dir(self):
        cfg = parse_config(minimal(), base_dir="/data/corpus")
        assert cfg.paths.documents == "/data/corpus/docs.jsonl"
        assert cfg.paths.run_dir == "/data/corpus/run"

    def test_absolute_paths_kept(self):
        data = minimal()
        data["paths"]["documents"] = "/elsewhere/docs.jsonl"
        cfg = parse_config(data, base_dir="/data")
        assert cfg.paths.documents == "/elsewhere/docs.jsonl"

    def test_load_config_resolves_against_file_dir(self, tmp_path):
        path = tmp_path / "conf" / "pipeline.json"
        path.parent.mkdir()
        path.write_text(json.dumps(minimal()), encoding="utf-8")
        cfg = load_config(path)
        assert cfg.paths.documents == str(tmp_path / "conf" / "docs.jsonl")

    def test_load_config_rejects_bad_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(ConfigError, match="invalid JSON"):
            load_config(path)

    def test_load_config_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "absent.json")

    def test_missing_paths_rejected(self):
        with pytest.raises(ConfigError, match="paths"):
            parse_config({"cluster": {"k_texts": 2, "k_images": 2}})

    def test_missing_cluster_rejected(self):
        data = minimal()
        del data["cluster"]
        with pytest.raises(ConfigError, match="cluster"):
            parse_config(data)


class TestUnknownKeys:
    def test_top_level_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown key.*retires"):
            parse_config(minimal(retires=3))

    @pytest.mark.parametrize(
        "section",
        ["paths", "filters", "dedup", "cluster", "retrieval", "augment", "join", "sample"],
    )
    def test_section_unknown_key(self, section):
        data = minimal()
        data.setdefault(section, dict(data.get(section, {})))
        data[section]["bogus_key"] = 1
        with pytest.raises(ConfigError, match=f"{section}: unknown key.*bogus_key"):
            parse_config(data)

    def test_error_lists_all_unknown_keys(self):
        with pytest.raises(ConfigError, match="aaa.*zzz"):
            parse_config(minimal(aaa=1, zzz=2))


class TestDomainValidation:
    def test_negative_seed_rejected(self):
        with pytest.raises(ConfigError, match="seed"):
            parse_config(minimal(seed=-1))

    def test_zero_workers_rejected(self):
        with pytest.raises(ConfigError, match="workers"):
            parse_config(minimal(workers=0))

    def test_bool_not_an_int(self):
        with pytest.raises(ConfigError, match="seed"):
            parse_config(minimal(seed=True))

    def test_filters_ordering(self):
        with pytest.raises(ConfigError, match="max_words"):
            parse_config(minimal(filters={"min_words": 10, "max_words": 5}))
        with pytest.raises(ConfigError, match="ppl_max"):
            parse_config(minimal(filters={"ppl_min": 100.0, "ppl_max": 50.0}))
        with pytest.raises(ConfigError, match="band_hi"):
            parse_config(minimal(filters={"band_lo": 0.7, "band_hi": 0.6}))

    def test_tau_range(self):
        with pytest.raises(ConfigError, match="tau_images"):
            parse_config(minimal(dedup={"tau_images": 1.5}))

    def test_dedup_mode_domain(self):
        with pytest.raises(ConfigError, match="mode"):
            parse_config(minimal(dedup={"mode": "fuzzy"}))

    def test_cluster_requires_sizes(self):
        with pytest.raises(ConfigError, match="k_texts"):
            parse_config(minimal(cluster={"k_images": 4}))

    def test_probes_bounded_by_k_texts(self):
        data = minimal(retrieval={"probes": 9})
        with pytest.raises(ConfigError, match="probes"):
            parse_config(data)
        data = minimal(retrieval={"probes": 8})
        assert parse_config(data).retrieval.probes == 8

    def test_http_generator_requires_endpoint(self):
        with pytest.raises(ConfigError, match="endpoint"):
            parse_config(minimal(augment={"generator": "http"}))

    def test_endpoint_only_for_http(self):
        with pytest.raises(ConfigError, match="endpoint"):
            parse_config(minimal(augment={"endpoint": "http://localhost:9"}))

    def test_unknown_generator(self):
        with pytest.raises(ConfigError, match="generator"):
            parse_config(minimal(augment={"generator": "gpu"}))

    def test_lexicon_encoder_needs_word_vectors(self):
        with pytest.raises(ConfigError, match="word_vectors"):
            parse_config(minimal(join={"synthetic_encoder": "lexicon"}))
        data = minimal(join={"synthetic_encoder": "lexicon"})
        data["paths"]["word_vectors"] = "words.rseb"
        cfg = parse_config(data)
        assert cfg.paths.word_vectors.endswith("words.rseb")

    def test_cap_and_preset_exclusive(self):
        with pytest.raises(ConfigError, match="either"):
            parse_config(minimal(sample={"cap": 5, "preset": "15m"}))

    def test_preset_resolves_to_cap(self):
        cfg = parse_config(minimal(sample={"preset": "30m"}))
        assert cfg.sample.cap == 35

    def test_unknown_preset(self):
        with pytest.raises(ConfigError, match="preset"):
            parse_config(minimal(sample={"preset": "900m"}))

    def test_wrong_type_inside_section(self):
        with pytest.raises(ConfigError, match="filters"):
            parse_config(minimal(filters={"ppl_min": "thirty"}))

    def test_section_must_be_mapping(self):
        with pytest.raises(ConfigError, match="filters"):
            parse_config(minimal(filters=[1, 2]))


class TestHashing:
    def test_config_hash_ignores_paths_and_workers(self):
        a = parse_config(minimal(), base_dir="/data/a")
        b = parse_config(minimal(workers=16), base_dir="/data/b")
        assert config_hash(a) == config_hash(b)

    def test_config_hash_sees_setting_changes(self):
        a = parse_config(minimal())
        b = parse_config(minimal(filters={"ppl_min": 31.0}))
        assert config_hash(a) != config_hash(b)

    def test_every_stage_has_a_subtree(self):
        cfg = parse_config(minimal())
        assert len(STAGE_NAMES) == 14
        for stage in STAGE_NAMES:
            assert isinstance(stage_config_hash(cfg, stage), str)

    def test_unrelated_change_leaves_stage_hash_alone(self):
        base = parse_config(minimal())
        tweaked = parse_config(minimal(filters={"band_lo": 0.52}))
        for stage in STAGE_NAMES:
            if stage == "gate":
                assert stage_config_hash(base, stage) != stage_config_hash(tweaked, stage)
            else:
                assert stage_config_hash(base, stage) == stage_config_hash(tweaked, stage)

    def test_seed_feeds_only_seeded_stages(self):
        base = parse_config(minimal())
        reseeded = parse_config(minimal(seed=99))
        changed = {
            s for s in STAGE_NAMES
            if stage_config_hash(base, s) != stage_config_hash(reseeded, s)
        }
        assert changed == {"cluster_texts", "cluster_images", "sample"}

    def test_workers_never_in_stage_hash(self):
        base = parse_config(minimal())
        wide = parse_config(minimal(workers=32))
        for stage in STAGE_NAMES:
            assert stage_config_hash(base, stage) == stage_config_hash(wide, stage)

    def test_subtree_shape(self):
        cfg = parse_config(minimal())
        assert stage_config_subtree(cfg, "gate") == {
            "filters": {"band_lo": 0.51, "band_hi": 0.61}
        }
        assert stage_config_subtree(cfg, "extract") == {}

    def test_unknown_stage_rejected(self):
        cfg = parse_config(minimal())
        with pytest.raises(ValueError, match="unknown stage"):
            stage_config_subtree(cfg, "polish")


class TestWorkers:
    def test_effective_workers_env_override(self, monkeypatch):
        cfg = parse_config(minimal(workers=2))
        monkeypatch.delenv("RSFORGE_WORKERS", raising=False)
        assert cfg.effective_workers() == 2
        monkeypatch.setenv("RSFORGE_WORKERS", "6")
        assert cfg.effective_workers() == 6

    def test_to_dict_round_trip_shape(self):
        cfg = parse_config(minimal())
        blob = cfg.to_dict()
        assert set(blob) == set(PipelineConfig._KEYS)
        assert blob["cluster"]["k_texts"] == 8
