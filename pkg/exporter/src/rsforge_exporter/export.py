"""Manifest-driven batch export into RSEB v1 embedding stores.

RSEB v1 layout (little-endian), as consumed by the curation pipeline:

    offset 0   magic bytes "RSEB"
    offset 4   u32 version (1)
    offset 8   u32 dim
    offset 12  u64 count
    offset 20  u8  normalized flag (always 1 here)
    offset 21  id table: count x (u16 byte length, UTF-8 bytes)
    then       count x dim float32, row-major

Vector rows are appended to a temporary file as batches finish; the
header and id table are only written once the final row count is known,
so an interrupted export never leaves a file with a valid header.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoders import EncodeError, get_encoder

MAGIC = b"RSEB"
VERSION = 1


class ExportError(ValueError):
    """Fatal manifest or format problem; nothing useful was written."""


@dataclass(frozen=True)
class ExportJob:
    """One batch-encoding run: manifest in, RSEB store out."""

    manifest: str
    output: str
    encoder: str = "fake-hash"
    dim: int = 64
    batch_size: int = 32

    def __post_init__(self):
        if self.batch_size < 1:
            raise ExportError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.dim < 1:
            raise ExportError(f"dim must be >= 1, got {self.dim}")


@dataclass(frozen=True)
class ExportResult:
    output: str
    count: int
    dim: int
    checksum: str
    errors: tuple[tuple[str, str], ...] = ()
    errors_path: str | None = None

    def to_json(self) -> dict:
        return {
            "output": self.output,
            "count": self.count,
            "dim": self.dim,
            "checksum": self.checksum,
            "failed": len(self.errors),
            "errors_path": self.errors_path,
        }


def read_manifest(path: str | os.PathLike) -> tuple[list[tuple[str, str]], str]:
    """Parse an export manifest into (id, payload) pairs.

    Every line is a JSON object, either {"id","text"} or {"id","uri"};
    a manifest mixes the two kinds, repeats an id, or malforms a line at
    its peril — all are fatal with the line number in the message.
    Returns the pairs in file order plus the manifest kind.
    """
    items: list[tuple[str, str]] = []
    seen: set[str] = set()
    kind: str | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ExportError(f"manifest line {line_no}: invalid JSON: {exc}") from exc
            if not isinstance(row, dict):
                raise ExportError(f"manifest line {line_no}: expected an object")
            payload_keys = set(row) - {"id"}
            if "id" not in row or payload_keys not in ({"text"}, {"uri"}):
                raise ExportError(
                    f"manifest line {line_no}: expected keys id+text or id+uri, "
                    f"got {sorted(row)}"
                )
            row_kind = payload_keys.pop()
            if kind is None:
                kind = row_kind
            elif row_kind != kind:
                raise ExportError(
                    f"manifest line {line_no}: '{row_kind}' row in a '{kind}' manifest"
                )
            id_, payload = row["id"], row[row_kind]
            if not isinstance(id_, str) or not id_:
                raise ExportError(f"manifest line {line_no}: id must be a non-empty string")
            if not isinstance(payload, str):
                raise ExportError(f"manifest line {line_no}: {row_kind} must be a string")
            if id_ in seen:
                raise ExportError(f"manifest line {line_no}: duplicate id {id_!r}")
            seen.add(id_)
            items.append((id_, payload))
    return items, kind or "text"


def _batches(items: list[tuple[str, str]], size: int):
    for start in range(0, len(items), size):
        yield items[start : start + size]


def _finalize(rows_tmp: Path, output: Path, ids: list[str], dim: int) -> None:
    with open(output, "wb") as out, open(rows_tmp, "rb") as rows:
        out.write(MAGIC)
        out.write(struct.pack("<I", VERSION))
        out.write(struct.pack("<I", dim))
        out.write(struct.pack("<Q", len(ids)))
        out.write(struct.pack("<B", 1))
        for id_ in ids:
            raw = id_.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise ExportError(f"id too long for format ({len(raw)} bytes)")
            out.write(struct.pack("<H", len(raw)))
            out.write(raw)
        shutil.copyfileobj(rows, out)


def export_embeddings(job: ExportJob) -> ExportResult:
    """Encode every manifest row and write the RSEB store.

    One output row per manifest id, in manifest order. An item the
    encoder rejects is skipped and listed in `<output>.errors.jsonl`;
    duplicate ids and malformed manifests abort before any encoding.
    """
    items, _ = read_manifest(job.manifest)
    encoder = get_encoder(job.encoder, job.dim)
    output = Path(job.output)
    output.parent.mkdir(parents=True, exist_ok=True)
    errors_path = output.with_name(output.name + ".errors.jsonl")

    ids: list[str] = []
    errors: list[tuple[str, str]] = []
    rows_tmp = output.with_name(output.name + ".rows.tmp")
    try:
        with open(rows_tmp, "wb") as rows:
            for batch in _batches(items, job.batch_size):
                payloads = [payload for _, payload in batch]
                try:
                    matrix = encoder.encode_batch(payloads)
                    pairs = [(batch[i][0], matrix[i]) for i in range(len(batch))]
                except EncodeError:
                    # Isolate the failing item(s) without losing the batch.
                    pairs = []
                    for id_, payload in batch:
                        try:
                            pairs.append((id_, encoder.encode_batch([payload])[0]))
                        except EncodeError as exc:
                            errors.append((id_, str(exc)))
                for id_, vec in pairs:
                    vec = np.ascontiguousarray(vec, dtype="<f4")
                    if vec.shape != (job.dim,):
                        raise ExportError(
                            f"encoder returned shape {vec.shape} for id {id_!r}, "
                            f"expected ({job.dim},)"
                        )
                    rows.write(vec.tobytes())
                    ids.append(id_)
        _finalize(rows_tmp, output, ids, job.dim)
    finally:
        rows_tmp.unlink(missing_ok=True)

    if errors:
        with open(errors_path, "w", encoding="utf-8") as fh:
            for id_, message in errors:
                fh.write(json.dumps({"id": id_, "error": message}, sort_keys=True) + "\n")
    else:
        errors_path.unlink(missing_ok=True)

    checksum = hashlib.sha256(output.read_bytes()).hexdigest()
    return ExportResult(
        output=str(output),
        count=len(ids),
        dim=job.dim,
        checksum=checksum,
        errors=tuple(errors),
        errors_path=str(errors_path) if errors else None,
    )
