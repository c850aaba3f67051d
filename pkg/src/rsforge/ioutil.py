"""Shared I/O helpers: canonical JSON, JSONL files, digests, stable hashing.

Every file the pipeline writes goes through `dumps_canonical` so that
re-running a stage on identical inputs produces byte-identical output.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, Sequence


def dumps_canonical(obj: Any) -> str:
    """Serialize with sorted keys and no whitespace; stable across runs."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def write_jsonl(path: str | os.PathLike, records: Iterable[dict]) -> int:
    """Write one canonical JSON object per line (LF). Returns record count."""
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(dumps_canonical(rec))
            fh.write("\n")
            n += 1
    return n


def read_jsonl(path: str | os.PathLike) -> Iterator[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def sha256_file(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def stable_hash(*parts: object) -> int:
    """Platform-independent 64-bit hash of the given parts.

    Used wherever a reproducible pseudo-random ranking is needed (e.g.
    cluster-capped sampling), so results do not depend on PYTHONHASHSEED,
    input order, or worker count.
    """
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(repr(part).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


def env_workers(default: int = 1) -> int:
    """Worker count from RSFORGE_WORKERS, falling back to `default`."""
    raw = os.environ.get("RSFORGE_WORKERS", "").strip()
    if not raw:
        return default
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"RSFORGE_WORKERS must be an integer, got {raw!r}")
    if value < 1:
        raise ValueError(f"RSFORGE_WORKERS must be >= 1, got {value}")
    return value


def map_ordered(
    fn: Callable[[Any], Any], items: Sequence[Any], workers: int = 1
) -> list[Any]:
    """Apply `fn` to items, preserving input order in the result.

    With workers > 1 the calls run on a thread pool; output order (and
    therefore everything derived from it) is identical to the sequential
    result, so worker count never changes pipeline output.
    """
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def ensure_dir(path: str | os.PathLike) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
