"""Tests for document parsing, sentence splitting, and record extraction."""

from __future__ import annotations

import json
import random

import pytest

from rsforge.corpus import (
    Document,
    DuplicateIdError,
    ImageRef,
    TextBlock,
    document_from_json,
    document_to_json,
    extract,
    parse_documents,
    split_sentences,
)


def doc(doc_id, *segments):
    return Document(doc_id, tuple(segments))


class TestSplitSentences:
    def test_plain_split(self):
        out = split_sentences("The sky is blue. The grass is green.")
        assert out == ["The sky is blue.", "The grass is green."]

    def test_question_and_exclamation(self):
        out = split_sentences("Is it done? Yes! Finally.")
        assert out == ["Is it done?", "Yes!", "Finally."]

    def test_abbreviation_does_not_split(self):
        out = split_sentences("Dr. Smith arrived. He sat down.")
        assert out == ["Dr. Smith arrived.", "He sat down."]

    def test_abbreviation_mid_sentence(self):
        out = split_sentences("See fig. 3 for details. Then continue.")
        assert out == ["See fig. 3 for details.", "Then continue."]

    def test_decimal_number_not_split(self):
        out = split_sentences("It weighs 3.5 kg in total.")
        assert out == ["It weighs 3.5 kg in total."]

    def test_lowercase_continuation_not_split(self):
        out = split_sentences("the server... then it crashed.")
        assert out == ["the server... then it crashed."]

    def test_ellipsis_then_capital_splits(self):
        out = split_sentences("It stopped... Then it started.")
        assert out == ["It stopped...", "Then it started."]

    def test_no_terminal_tail_kept(self):
        out = split_sentences("First part. second half with no end")
        assert out == ["First part. second half with no end"]

    def test_empty_and_whitespace(self):
        assert split_sentences("") == []
        assert split_sentences("   \n\t ") == []

    def test_no_characters_lost(self):
        # joined output must preserve every non-whitespace character
        rng = random.Random(42)
        words = ["alpha", "beta", "Dr.", "run!", "stop?", "x.", "Y", "3.5", "end."]
        for _ in range(200):
            text = " ".join(rng.choice(words) for _ in range(rng.randint(0, 30)))
            joined = "".join(split_sentences(text))
            assert sorted(joined.replace(" ", "")) == sorted(text.replace(" ", ""))


class TestDocumentJson:
    def test_round_trip(self):
        d = doc(
            "d1",
            TextBlock("Hello there. General greeting."),
            ImageRef("img-1", 640, 480, "http://host/a.jpg"),
            TextBlock("Tail text"),
        )
        assert document_from_json(document_to_json(d)) == d

    def test_round_trip_randomized(self):
        rng = random.Random(9)
        for t in range(50):
            segments = []
            for i in range(rng.randint(1, 6)):
                if rng.random() < 0.5:
                    segments.append(TextBlock(f"Block {t}-{i} text."))
                else:
                    segments.append(
                        ImageRef(
                            f"im{t}-{i}",
                            rng.randint(1, 2000),
                            rng.randint(1, 2000),
                            f"file:///p/{t}/{i}",
                        )
                    )
            d = doc(f"doc{t}", *segments)
            blob = json.dumps(document_to_json(d))
            assert document_from_json(json.loads(blob)) == d

    @pytest.mark.parametrize(
        "obj",
        [
            {"segments": [{"type": "text", "text": "x"}]},  # no doc_id
            {"doc_id": "", "segments": [{"type": "text", "text": "x"}]},
            {"doc_id": "d", "segments": []},
            {"doc_id": "d"},
            {"doc_id": "d", "segments": [{"type": "audio"}]},
            {"doc_id": "d", "segments": [{"type": "text"}]},
            {"doc_id": "d", "segments": [{"type": "image", "image_id": "i"}]},
            {
                "doc_id": "d",
                "segments": [
                    {"type": "image", "image_id": "i", "width": 1.5, "height": 2}
                ],
            },
        ],
    )
    def test_malformed_rejected(self, obj):
        with pytest.raises(ValueError):
            document_from_json(obj)

    def test_non_positive_dimensions_rejected(self):
        with pytest.raises(ValueError, match="dimensions"):
            doc("d", ImageRef("i", 0, 100, ""))


class TestParseDocuments:
    def test_reads_in_order(self, tmp_path):
        path = tmp_path / "docs.jsonl"
        lines = [
            json.dumps(
                {"doc_id": f"d{i}", "segments": [{"type": "text", "text": "Hi."}]}
            )
            for i in range(5)
        ]
        path.write_text("\n".join(lines) + "\n")
        docs = list(parse_documents(path))
        assert [d.doc_id for d in docs] == [f"d{i}" for i in range(5)]

    def test_malformed_lines_skipped_and_reported(self, tmp_path):
        path = tmp_path / "docs.jsonl"
        path.write_text(
            "\n".join(
                [
                    json.dumps(
                        {"doc_id": "ok1", "segments": [{"type": "text", "text": "A."}]}
                    ),
                    "{not json",
                    json.dumps({"doc_id": "bad", "segments": []}),
                    json.dumps(
                        {"doc_id": "ok2", "segments": [{"type": "text", "text": "B."}]}
                    ),
                ]
            )
        )
        errors = []
        docs = list(parse_documents(path, on_error=lambda n, m: errors.append(n)))
        assert [d.doc_id for d in docs] == ["ok1", "ok2"]
        assert errors == [2, 3]

    def test_blank_lines_ignored(self, tmp_path):
        path = tmp_path / "docs.jsonl"
        path.write_text(
            "\n\n"
            + json.dumps({"doc_id": "d", "segments": [{"type": "text", "text": "A."}]})
            + "\n\n"
        )
        assert len(list(parse_documents(path))) == 1

    def test_missing_file_raises(self, tmp_path):
        with pytest.raises(OSError):
            list(parse_documents(tmp_path / "absent.jsonl"))


class TestExtract:
    def test_flattening_order_and_ids(self):
        docs = [
            doc(
                "d1",
                TextBlock("One fish. Two fish."),
                ImageRef("i1", 10, 10, ""),
                TextBlock("Red fish."),
            ),
            doc("d2", ImageRef("i2", 20, 20, "")),
        ]
        images, sentences, stats = extract(docs)
        assert [im.image_id for im in images] == ["i1", "i2"]
        assert [s.sentence_id for s in sentences] == [
            "d1#s0000",
            "d1#s0001",
            "d1#s0002",
        ]
        assert [s.text for s in sentences] == ["One fish.", "Two fish.", "Red fish."]
        assert [s.ordinal for s in sentences] == [0, 1, 2]
        assert (stats.documents, stats.images, stats.sentences) == (2, 2, 3)

    def test_ordinals_continue_across_blocks(self):
        docs = [
            doc(
                "d",
                TextBlock("A one. B two."),
                ImageRef("i", 5, 5, ""),
                TextBlock("C three."),
            )
        ]
        _, sentences, _ = extract(docs)
        assert [s.ordinal for s in sentences] == [0, 1, 2]
        assert sentences[2].sentence_id == "d#s0002"

    def test_duplicate_doc_id_fatal(self):
        docs = [doc("d", TextBlock("Hi.")), doc("d", TextBlock("Again."))]
        with pytest.raises(DuplicateIdError, match="doc_id"):
            extract(docs)

    def test_duplicate_image_id_fatal(self):
        docs = [
            doc("d1", ImageRef("i", 5, 5, "")),
            doc("d2", ImageRef("i", 6, 6, "")),
        ]
        with pytest.raises(DuplicateIdError, match="image_id"):
            extract(docs)

    def test_image_records_carry_doc_and_uri(self):
        docs = [doc("d9", ImageRef("im", 30, 40, "s3://b/k.png"))]
        images, _, _ = extract(docs)
        assert images[0].doc_id == "d9"
        assert images[0].uri == "s3://b/k.png"
        assert (images[0].width, images[0].height) == (30, 40)
