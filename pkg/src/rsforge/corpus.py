"""Interleaved-document data model, parsing, and record extraction.

A document is an ordered mixture of text blocks and image references with
no explicit pairing between them. This module parses the documents.jsonl
wire format, splits text blocks into sentences, and emits flat image and
sentence record streams for the downstream stages.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from importlib import resources
from typing import Callable, Iterable, Iterator, Union


@dataclass(frozen=True)
class TextBlock:
    text: str


@dataclass(frozen=True)
class ImageRef:
    image_id: str
    width: int
    height: int
    uri: str


Segment = Union[TextBlock, ImageRef]


@dataclass(frozen=True)
class Document:
    doc_id: str
    segments: tuple[Segment, ...]

    def __post_init__(self):
        if not self.doc_id:
            raise ValueError("doc_id must be non-empty")
        if not self.segments:
            raise ValueError(f"document {self.doc_id!r} has no segments")
        for seg in self.segments:
            if isinstance(seg, ImageRef) and (seg.width < 1 or seg.height < 1):
                raise ValueError(
                    f"image {seg.image_id!r} has non-positive dimensions "
                    f"{seg.width}x{seg.height}"
                )


@dataclass(frozen=True)
class SentenceRecord:
    sentence_id: str
    text: str
    doc_id: str
    ordinal: int


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    width: int
    height: int
    doc_id: str
    uri: str


@dataclass
class ExtractionStats:
    documents: int = 0
    images: int = 0
    sentences: int = 0


class DuplicateIdError(ValueError):
    """A doc/image id appeared twice; ids are join keys for every stage."""


def _load_abbreviations() -> frozenset[str]:
    text = (
        resources.files("rsforge.data").joinpath("abbreviations.txt").read_text("utf-8")
    )
    abbrevs = set()
    for line in text.splitlines():
        line = line.strip().lower()
        if line and not line.startswith("#"):
            abbrevs.add(line)
    return frozenset(abbrevs)


ABBREVIATIONS = _load_abbreviations()

_TERMINALS = ".!?"
_OPENERS = "\"'“‘(["


def _is_boundary(text: str, i: int) -> bool:
    """True when the terminal run ending at text[i] closes a sentence.

    A boundary needs whitespace after the punctuation and an uppercase
    letter, digit, or opening quote starting the next sentence. A period
    whose token is on the abbreviation list never splits.
    """
    j = i + 1
    if j >= len(text) or not text[j].isspace():
        return False
    while j < len(text) and text[j].isspace():
        j += 1
    if j >= len(text):
        return False
    nxt = text[j]
    if not (nxt.isupper() or nxt.isdigit() or nxt in _OPENERS):
        return False
    if text[i] == ".":
        start = i
        while start > 0 and not text[start - 1].isspace():
            start -= 1
        token = text[start : i + 1].lower()
        if token in ABBREVIATIONS:
            return False
    return True


def split_sentences(text: str) -> list[str]:
    """Rule-based sentence splitter.

    Splits on ., !, ? followed by whitespace and an uppercase/digit/quote
    start, except after known abbreviations. Never drops non-whitespace
    characters: the pieces, joined with single spaces, preserve them all.
    """
    pieces = []
    start = 0
    i = 0
    n = len(text)
    while i < n:
        if text[i] in _TERMINALS:
            # consume a run of terminal punctuation ("?!", "...")
            end = i
            while end + 1 < n and text[end + 1] in _TERMINALS:
                end += 1
            if _is_boundary(text, end):
                piece = text[start : end + 1].strip()
                if piece:
                    pieces.append(piece)
                start = end + 1
            i = end + 1
        else:
            i += 1
    tail = text[start:].strip()
    if tail:
        pieces.append(tail)
    return pieces


def segment_sentences(
    block: TextBlock, doc_id: str, base_ordinal: int
) -> list[SentenceRecord]:
    """Split one text block into sentence records with consecutive ordinals."""
    records = []
    for offset, sentence in enumerate(split_sentences(block.text)):
        ordinal = base_ordinal + offset
        records.append(
            SentenceRecord(
                sentence_id=f"{doc_id}#s{ordinal:04d}",
                text=sentence,
                doc_id=doc_id,
                ordinal=ordinal,
            )
        )
    return records


def document_to_json(doc: Document) -> dict:
    segments = []
    for seg in doc.segments:
        if isinstance(seg, TextBlock):
            segments.append({"type": "text", "text": seg.text})
        else:
            segments.append(
                {
                    "type": "image",
                    "image_id": seg.image_id,
                    "width": seg.width,
                    "height": seg.height,
                    "uri": seg.uri,
                }
            )
    return {"doc_id": doc.doc_id, "segments": segments}


def document_from_json(obj: dict) -> Document:
    if not isinstance(obj, dict):
        raise ValueError("document must be a JSON object")
    doc_id = obj.get("doc_id")
    if not isinstance(doc_id, str) or not doc_id:
        raise ValueError("missing or empty doc_id")
    raw_segments = obj.get("segments")
    if not isinstance(raw_segments, list) or not raw_segments:
        raise ValueError(f"document {doc_id!r}: segments must be a non-empty list")
    segments: list[Segment] = []
    for i, seg in enumerate(raw_segments):
        if not isinstance(seg, dict):
            raise ValueError(f"document {doc_id!r}: segment {i} is not an object")
        kind = seg.get("type")
        if kind == "text":
            text = seg.get("text")
            if not isinstance(text, str):
                raise ValueError(f"document {doc_id!r}: segment {i} missing text")
            segments.append(TextBlock(text))
        elif kind == "image":
            image_id = seg.get("image_id")
            width = seg.get("width")
            height = seg.get("height")
            uri = seg.get("uri", "")
            if not isinstance(image_id, str) or not image_id:
                raise ValueError(f"document {doc_id!r}: segment {i} missing image_id")
            if not isinstance(width, int) or not isinstance(height, int):
                raise ValueError(
                    f"document {doc_id!r}: image {image_id!r} has non-integer size"
                )
            if not isinstance(uri, str):
                raise ValueError(f"document {doc_id!r}: image {image_id!r} bad uri")
            segments.append(ImageRef(image_id, width, height, uri))
        else:
            raise ValueError(f"document {doc_id!r}: segment {i} has type {kind!r}")
    return Document(doc_id, tuple(segments))


def parse_documents(
    path: str | os.PathLike,
    on_error: Callable[[int, str], None] | None = None,
) -> Iterator[Document]:
    """Yield documents from a documents.jsonl file, in file order.

    Malformed lines are skipped; each is reported to `on_error` with its
    1-based line number. An unreadable file raises immediately.
    """
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                yield document_from_json(obj)
            except (json.JSONDecodeError, ValueError) as exc:
                if on_error is not None:
                    on_error(line_no, str(exc))


def extract(
    docs: Iterable[Document],
) -> tuple[list[ImageRecord], list[SentenceRecord], ExtractionStats]:
    """Flatten documents into image and sentence record streams.

    Record order follows document order, then segment order. Duplicate
    doc/image ids are fatal: they would corrupt every downstream join.
    """
    stats = ExtractionStats()
    images: list[ImageRecord] = []
    sentences: list[SentenceRecord] = []
    seen_docs: set[str] = set()
    seen_images: set[str] = set()
    for doc in docs:
        if doc.doc_id in seen_docs:
            raise DuplicateIdError(f"duplicate doc_id {doc.doc_id!r}")
        seen_docs.add(doc.doc_id)
        stats.documents += 1
        ordinal = 0
        for seg in doc.segments:
            if isinstance(seg, ImageRef):
                if seg.image_id in seen_images:
                    raise DuplicateIdError(f"duplicate image_id {seg.image_id!r}")
                seen_images.add(seg.image_id)
                images.append(
                    ImageRecord(seg.image_id, seg.width, seg.height, doc.doc_id, seg.uri)
                )
                stats.images += 1
            else:
                records = segment_sentences(seg, doc.doc_id, ordinal)
                sentences.extend(records)
                ordinal += len(records)
                stats.sentences += len(records)
    return images, sentences, stats
