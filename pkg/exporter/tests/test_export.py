"""Exporter tests, including the cross-component round-trip with the
curation pipeline's own RSEB reader."""

from __future__ import annotations

import hashlib
import json

import numpy as np
import pytest

from rsforge_exporter.cli import main
from rsforge_exporter.encoders import EncodeError, FakeHashEncoder, get_encoder
from rsforge_exporter.export import (
    ExportError,
    ExportJob,
    ExportResult,
    export_embeddings,
    read_manifest,
)

# The pipeline side of the format boundary — used by tests only, to prove
# the files interoperate; the exporter package itself never imports it.
from rsforge.store import read_store, write_store


def write_manifest(path, rows):
    path.write_text(
        "".join(json.dumps(row) + "\n" for row in rows), encoding="utf-8"
    )
    return path


def text_manifest(path, n=7, prefix="sent"):
    return write_manifest(
        path,
        [{"id": f"{prefix}{i:03d}", "text": f"the {prefix} number {i} rests"} for i in range(n)],
    )


class TestManifest:
    def test_reads_text_rows_in_order(self, tmp_path):
        items, kind = read_manifest(text_manifest(tmp_path / "m.jsonl", n=5))
        assert kind == "text"
        assert [i for i, _ in items] == [f"sent{i:03d}" for i in range(5)]

    def test_reads_uri_rows(self, tmp_path):
        manifest = write_manifest(
            tmp_path / "m.jsonl",
            [{"id": "img1", "uri": "file:///a.jpg"}, {"id": "img2", "uri": "file:///b.jpg"}],
        )
        items, kind = read_manifest(manifest)
        assert kind == "uri"
        assert items[1] == ("img2", "file:///b.jpg")

    def test_duplicate_id_fatal(self, tmp_path):
        manifest = write_manifest(
            tmp_path / "m.jsonl",
            [{"id": "x", "text": "a"}, {"id": "x", "text": "b"}],
        )
        with pytest.raises(ExportError, match="line 2: duplicate id 'x'"):
            read_manifest(manifest)

    def test_mixed_kinds_fatal(self, tmp_path):
        manifest = write_manifest(
            tmp_path / "m.jsonl",
            [{"id": "a", "text": "t"}, {"id": "b", "uri": "u"}],
        )
        with pytest.raises(ExportError, match="line 2: 'uri' row in a 'text' manifest"):
            read_manifest(manifest)

    def test_bad_json_names_line(self, tmp_path):
        manifest = tmp_path / "m.jsonl"
        manifest.write_text('{"id": "a", "text": "t"}\nnot json\n', encoding="utf-8")
        with pytest.raises(ExportError, match="line 2: invalid JSON"):
            read_manifest(manifest)

    def test_wrong_keys_fatal(self, tmp_path):
        manifest = write_manifest(tmp_path / "m.jsonl", [{"id": "a", "caption": "t"}])
        with pytest.raises(ExportError, match="id\\+text or id\\+uri"):
            read_manifest(manifest)

    def test_blank_lines_skipped(self, tmp_path):
        manifest = tmp_path / "m.jsonl"
        manifest.write_text('\n{"id": "a", "text": "t"}\n\n', encoding="utf-8")
        items, _ = read_manifest(manifest)
        assert len(items) == 1


class TestEncoders:
    def test_fake_hash_deterministic_and_unit(self):
        enc = FakeHashEncoder(dim=32)
        a = enc.encode_batch(["hello world"])
        b = enc.encode_batch(["hello world"])
        assert np.array_equal(a, b)
        assert a.dtype == np.float32
        assert abs(float(np.linalg.norm(a[0])) - 1.0) < 1e-6

    def test_distinct_payloads_distinct_vectors(self):
        enc = FakeHashEncoder(dim=32)
        rows = enc.encode_batch(["alpha", "beta"])
        assert not np.array_equal(rows[0], rows[1])

    def test_empty_payload_is_encode_error(self):
        with pytest.raises(EncodeError, match="empty payload"):
            FakeHashEncoder(dim=8).encode_batch([""])

    def test_unknown_encoder_lists_available(self):
        with pytest.raises(ValueError, match="fake-hash"):
            get_encoder("eva02-clip", dim=64)


class TestExport:
    def test_round_trip_through_pipeline_reader(self, tmp_path):
        manifest = text_manifest(tmp_path / "m.jsonl", n=7)
        job = ExportJob(manifest=str(manifest), output=str(tmp_path / "out.rseb"), dim=48)
        result = export_embeddings(job)
        assert result.count == 7

        store = read_store(tmp_path / "out.rseb")
        assert store.normalized is True
        assert store.dim == 48
        assert list(store.ids) == [f"sent{i:03d}" for i in range(7)]
        norms = np.linalg.norm(store.vectors.astype(np.float64), axis=1)
        assert np.all(np.abs(norms - 1.0) < 1e-6)

    def test_cross_component_checksum(self, tmp_path):
        """The pipeline re-writing the loaded store reproduces the file
        byte for byte, so both sides agree on every format detail."""
        manifest = text_manifest(tmp_path / "m.jsonl", n=9)
        result = export_embeddings(
            ExportJob(manifest=str(manifest), output=str(tmp_path / "out.rseb"))
        )
        store = read_store(tmp_path / "out.rseb")
        write_store(store, tmp_path / "rewritten.rseb")
        rewritten = hashlib.sha256((tmp_path / "rewritten.rseb").read_bytes()).hexdigest()
        assert result.checksum == rewritten
        assert result.checksum == hashlib.sha256(
            (tmp_path / "out.rseb").read_bytes()
        ).hexdigest()

    def test_three_sentences_count_three(self, tmp_path):
        manifest = text_manifest(tmp_path / "m.jsonl", n=3)
        result = export_embeddings(
            ExportJob(manifest=str(manifest), output=str(tmp_path / "out.rseb"))
        )
        assert result.count == 3
        assert read_store(tmp_path / "out.rseb").count == 3

    def test_encode_failure_goes_to_sidecar_row_omitted(self, tmp_path):
        manifest = write_manifest(
            tmp_path / "m.jsonl",
            [
                {"id": "good1", "text": "fine"},
                {"id": "bad", "text": ""},
                {"id": "good2", "text": "also fine"},
            ],
        )
        result = export_embeddings(
            ExportJob(manifest=str(manifest), output=str(tmp_path / "out.rseb"))
        )
        assert result.count == 2
        assert [e[0] for e in result.errors] == ["bad"]

        store = read_store(tmp_path / "out.rseb")
        assert list(store.ids) == ["good1", "good2"]

        sidecar = [
            json.loads(line)
            for line in (tmp_path / "out.rseb.errors.jsonl").read_text().splitlines()
        ]
        assert sidecar == [{"id": "bad", "error": "empty payload"}]

    def test_no_stale_sidecar_after_clean_run(self, tmp_path):
        manifest = write_manifest(tmp_path / "bad.jsonl", [{"id": "bad", "text": ""}])
        out = tmp_path / "out.rseb"
        export_embeddings(ExportJob(manifest=str(manifest), output=str(out)))
        assert (tmp_path / "out.rseb.errors.jsonl").exists()

        manifest = text_manifest(tmp_path / "good.jsonl", n=2)
        export_embeddings(ExportJob(manifest=str(manifest), output=str(out)))
        assert not (tmp_path / "out.rseb.errors.jsonl").exists()

    def test_batch_size_does_not_change_output(self, tmp_path):
        manifest = text_manifest(tmp_path / "m.jsonl", n=23)
        checksums = set()
        for batch_size in (1, 4, 64):
            out = tmp_path / f"out-{batch_size}.rseb"
            result = export_embeddings(
                ExportJob(
                    manifest=str(manifest), output=str(out), batch_size=batch_size
                )
            )
            checksums.add(result.checksum)
        assert len(checksums) == 1

    def test_uri_manifest_exports(self, tmp_path):
        manifest = write_manifest(
            tmp_path / "m.jsonl",
            [{"id": f"img{i}", "uri": f"toy://img{i}.jpg"} for i in range(4)],
        )
        result = export_embeddings(
            ExportJob(manifest=str(manifest), output=str(tmp_path / "out.rseb"), dim=16)
        )
        assert result.count == 4
        assert read_store(tmp_path / "out.rseb").dim == 16

    def test_empty_manifest_writes_empty_store(self, tmp_path):
        manifest = tmp_path / "m.jsonl"
        manifest.write_text("", encoding="utf-8")
        result = export_embeddings(
            ExportJob(manifest=str(manifest), output=str(tmp_path / "out.rseb"))
        )
        assert result.count == 0
        assert read_store(tmp_path / "out.rseb").count == 0

    def test_duplicate_id_aborts_before_writing(self, tmp_path):
        manifest = write_manifest(
            tmp_path / "m.jsonl",
            [{"id": "x", "text": "a"}, {"id": "x", "text": "b"}],
        )
        out = tmp_path / "out.rseb"
        with pytest.raises(ExportError, match="duplicate id"):
            export_embeddings(ExportJob(manifest=str(manifest), output=str(out)))
        assert not out.exists()

    def test_no_tmp_file_left_behind(self, tmp_path):
        manifest = text_manifest(tmp_path / "m.jsonl", n=5)
        export_embeddings(
            ExportJob(manifest=str(manifest), output=str(tmp_path / "out.rseb"))
        )
        assert not list(tmp_path.glob("*.tmp"))

    def test_invalid_job_parameters(self, tmp_path):
        with pytest.raises(ExportError, match="batch_size"):
            ExportJob(manifest="m", output="o", batch_size=0)
        with pytest.raises(ExportError, match="dim"):
            ExportJob(manifest="m", output="o", dim=0)

    def test_result_json_shape(self, tmp_path):
        manifest = text_manifest(tmp_path / "m.jsonl", n=2)
        result = export_embeddings(
            ExportJob(manifest=str(manifest), output=str(tmp_path / "out.rseb"))
        )
        blob = result.to_json()
        assert set(blob) == {"output", "count", "dim", "checksum", "failed", "errors_path"}
        assert blob["failed"] == 0 and blob["errors_path"] is None


class TestCli:
    def test_export_and_read_back(self, tmp_path, capsys):
        manifest = text_manifest(tmp_path / "m.jsonl", n=6)
        out = tmp_path / "cli.rseb"
        code = main(
            ["--manifest", str(manifest), "--out", str(out), "--dim", "24", "--batch", "2"]
        )
        assert code == 0
        blob = json.loads(capsys.readouterr().out)
        assert blob["count"] == 6 and blob["dim"] == 24
        assert read_store(out).count == 6

    def test_validation_error_exits_2(self, tmp_path, capsys):
        manifest = write_manifest(
            tmp_path / "m.jsonl", [{"id": "x", "text": "a"}, {"id": "x", "text": "b"}]
        )
        code = main(["--manifest", str(manifest), "--out", str(tmp_path / "o.rseb")])
        assert code == 2
        assert "duplicate id" in capsys.readouterr().err

    def test_missing_manifest_exits_1(self, tmp_path, capsys):
        code = main(
            ["--manifest", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path / "o.rseb")]
        )
        assert code == 1
        capsys.readouterr()

    def test_unknown_encoder_exits_2(self, tmp_path, capsys):
        manifest = text_manifest(tmp_path / "m.jsonl", n=1)
        code = main(
            ["--manifest", str(manifest), "--out", str(tmp_path / "o.rseb"),
             "--encoder", "clip-vit"]
        )
        assert code == 2
        assert "available" in capsys.readouterr().err
