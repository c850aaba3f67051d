"""Semantic augmentation support: tag-lexicon expansion, fusion-prompt
assembly, and a batched generation client with retry and reordering.

The fused caption itself comes from an external generation endpoint; this
module owns everything around that call — building the prompt, batching
requests, retrying transient failures, and parsing responses back into
per-image results in request order.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from typing import Callable, Iterable, Protocol, Sequence

from .filters import STOPWORDS, TOKEN_STRIP_CHARS
from .ioutil import read_jsonl

DEFAULT_TAG_TARGET = 8000

SOURCE_BASE = "base"
SOURCE_CORPUS = "corpus_derived"


@dataclass(frozen=True)
class TagLexicon:
    tags: tuple[str, ...]
    sources: tuple[str, ...]

    def __post_init__(self):
        if len(self.tags) != len(self.sources):
            raise ValueError("tags and sources must align")
        if len(set(self.tags)) != len(self.tags):
            raise ValueError("lexicon tags must be unique")
        for src in self.sources:
            if src not in (SOURCE_BASE, SOURCE_CORPUS):
                raise ValueError(f"unknown tag source {src!r}")

    def __len__(self) -> int:
        return len(self.tags)

    def __contains__(self, tag: str) -> bool:
        return tag in set(self.tags)


def _tag_candidates(sentences: Iterable[str]) -> list[tuple[str, int]]:
    """Candidate tags with document frequencies, best first.

    A candidate is a lowercase alphabetic token of length >= 3 that is
    not a stopword; it is counted once per sentence it appears in and
    ranked by that count, ties broken lexicographically.
    """
    doc_freq: dict[str, int] = {}
    for text in sentences:
        seen = set()
        for tok in text.lower().split():
            tok = tok.strip(TOKEN_STRIP_CHARS)
            if len(tok) >= 3 and tok.isalpha() and tok not in STOPWORDS:
                seen.add(tok)
        for tok in seen:
            doc_freq[tok] = doc_freq.get(tok, 0) + 1
    return sorted(doc_freq.items(), key=lambda kv: (-kv[1], kv[0]))


def expand_tag_lexicon(
    base_tags: Sequence[str],
    sentences: Iterable[str],
    target: int = DEFAULT_TAG_TARGET,
) -> TagLexicon:
    """Base tags first, then corpus-derived candidates up to `target`."""
    if len(set(base_tags)) != len(base_tags):
        raise ValueError("base tags must be unique")
    if len(base_tags) > target:
        raise ValueError(
            f"base lexicon ({len(base_tags)}) already exceeds target {target}"
        )
    tags = list(base_tags)
    sources = [SOURCE_BASE] * len(tags)
    have = set(tags)
    for tok, _freq in _tag_candidates(sentences):
        if len(tags) >= target:
            break
        if tok in have:
            continue
        tags.append(tok)
        sources.append(SOURCE_CORPUS)
        have.add(tok)
    return TagLexicon(tuple(tags), tuple(sources))


# ---------------------------------------------------------------------------
# prompt assembly

FUSION_PROMPT_TEMPLATE = (
    "Please merge the information from the given raw text and the synthetic "
    "caption with the help of the highly relevant detection tags. The raw "
    "caption offers detailed real-world information, yet it suffers from flaws "
    "in sentence structure and grammar. The synthetic caption exhibits "
    "impeccable sentence structure but often lacks in-depth real-world details "
    "and may contain false information. The highly relevant detection tags are "
    "provided to enrich the semantic information of the raw caption, while "
    "some are redundant and noisy. You are a great information integration and "
    "summary expert, you are also good at enriching semantic information. "
    "Ensure a well-structured sentence while retaining the detailed real-world "
    "information provided in the raw caption. Avoid simply concatenating the "
    "sentences and avoid adding external information to describe. Correct and "
    "simplify sentences finally. Raw caption:<raw caption>, synthetic "
    "caption:<synthetic caption>, and highly relevant detection "
    "tags:<detection tags>"
)

_PH_RAW = "<raw caption>"
_PH_SYNTH = "<synthetic caption>"
_PH_TAGS = "<detection tags>"


@dataclass(frozen=True)
class GenerationRequest:
    image_id: str
    raw_caption: str
    synthetic_caption: str
    tags: tuple[str, ...]
    prompt: str


def assemble_prompt(
    image_id: str,
    raw_caption: str,
    synthetic_caption: str,
    tags: Sequence[str],
) -> GenerationRequest:
    """Render the fusion prompt with the three payload slots filled in.

    Substitution runs right-to-left through the template so a payload can
    never be mistaken for a later placeholder.
    """
    if not raw_caption.strip():
        raise ValueError(f"image {image_id!r}: raw caption is empty")
    if not synthetic_caption.strip():
        raise ValueError(f"image {image_id!r}: synthetic caption is empty")
    joined_tags = ", ".join(tags)
    prompt = FUSION_PROMPT_TEMPLATE
    for placeholder, value in (
        (_PH_TAGS, joined_tags),
        (_PH_SYNTH, synthetic_caption),
        (_PH_RAW, raw_caption),
    ):
        head, sep, tail = prompt.partition(placeholder)
        if not sep:
            raise AssertionError(f"template lost placeholder {placeholder!r}")
        prompt = head + value + tail
    return GenerationRequest(
        image_id=image_id,
        raw_caption=raw_caption,
        synthetic_caption=synthetic_caption,
        tags=tuple(tags),
        prompt=prompt,
    )


# ---------------------------------------------------------------------------
# generation client contract and implementations

STATUS_OK = "ok"


def status_failed(reason: str) -> str:
    return f"failed({reason})"


@dataclass(frozen=True)
class GenerationResult:
    image_id: str
    text: str
    status: str
    attempts: int

    def __post_init__(self):
        if self.status == STATUS_OK and not self.text:
            raise ValueError(f"ok result for {self.image_id!r} has empty text")

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK

    def to_json(self) -> dict:
        return {"image_id": self.image_id, "text": self.text, "status": self.status}


class TransientGenerationError(RuntimeError):
    """The endpoint failed in a way worth retrying."""


class GenerationParseError(ValueError):
    """A response line could not be understood."""


class GenerationClient(Protocol):
    """Wire contract: a batch of {"id","prompt"} dicts in, one response
    per request out — each either a parsed {"id","text"} dict or a raw
    JSON line (bytes). Order of responses is not guaranteed."""

    def send_batch(self, requests: list[dict]) -> list[dict | bytes]: ...


def parse_generation(raw_response: bytes | str) -> str:
    """Extract the fused caption from one raw response line.

    Trims surrounding whitespace, then one layer of matching quotes,
    then whitespace again.
    """
    try:
        obj = json.loads(raw_response)
    except json.JSONDecodeError as exc:
        raise GenerationParseError(f"response is not JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise GenerationParseError("response is not a JSON object")
    text = obj.get("text")
    if not isinstance(text, str):
        raise GenerationParseError("response missing string 'text' field")
    return _trim_caption(text)


def _trim_caption(text: str) -> str:
    text = text.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        text = text[1:-1]
    return text.strip()


class EchoClient:
    """In-process mock: answers every prompt with its payload tail.

    The returned text starts at "Raw caption:", so it contains exactly
    the raw caption, synthetic caption, and tags that went in. Responses
    come back in reversed order to exercise reordering in the caller.
    """

    marker = "Raw caption:"

    def send_batch(self, requests: list[dict]) -> list[dict | bytes]:
        out = []
        for req in requests:
            prompt = req["prompt"]
            pos = prompt.find(self.marker)
            text = prompt[pos:] if pos >= 0 else prompt
            out.append({"id": req["id"], "text": text})
        return out[::-1]


class FlakyClient:
    """Raises a transient error for the first `failures` batch calls."""

    def __init__(self, inner: GenerationClient, failures: int):
        self.inner = inner
        self.failures = failures
        self.calls = 0

    def send_batch(self, requests: list[dict]) -> list[dict | bytes]:
        self.calls += 1
        if self.calls <= self.failures:
            raise TransientGenerationError(f"synthetic outage #{self.calls}")
        return self.inner.send_batch(requests)


class FailingClient:
    """Never succeeds."""

    def send_batch(self, requests: list[dict]) -> list[dict | bytes]:
        raise TransientGenerationError("endpoint unreachable")


class HttpGenerationClient:
    """POSTs each batch as JSON lines and expects JSON lines back."""

    def __init__(self, url: str, timeout: float = 30.0):
        import requests  # deferred so offline use never pays for it

        self._requests = requests
        self.url = url
        self.timeout = timeout

    def send_batch(self, requests: list[dict]) -> list[dict | bytes]:
        body = "\n".join(json.dumps(r) for r in requests)
        try:
            resp = self._requests.post(
                self.url,
                data=body.encode("utf-8"),
                headers={"Content-Type": "application/x-ndjson"},
                timeout=self.timeout,
            )
            resp.raise_for_status()
        except Exception as exc:  # connection/timeout/HTTP status
            raise TransientGenerationError(str(exc)) from exc
        return [line for line in resp.content.splitlines() if line.strip()]


# ---------------------------------------------------------------------------
# batched generation with retry


def _response_entry(item: dict | bytes | str) -> tuple[str, str]:
    """Normalize one response to (wire id, trimmed text)."""
    if isinstance(item, (bytes, str)):
        obj = json.loads(item)  # may raise; caller treats as parse error
        if not isinstance(obj, dict):
            raise GenerationParseError("response is not a JSON object")
        wire_id = obj.get("id")
        text = parse_generation(item)
    else:
        wire_id = item.get("id")
        raw_text = item.get("text")
        if not isinstance(raw_text, str):
            raise GenerationParseError("response missing string 'text' field")
        text = _trim_caption(raw_text)
    if not isinstance(wire_id, str):
        raise GenerationParseError("response missing string 'id' field")
    return wire_id, text


def generate_synthetic(
    requests: Sequence[GenerationRequest],
    client: GenerationClient,
    max_retries: int = 3,
    batch: int = 16,
    backoff_base: float = 0.5,
    sleep: Callable[[float], None] = time.sleep,
) -> list[GenerationResult]:
    """Run all requests through the client, in batches, with retry.

    Results come back in request order regardless of response order.
    A batch raising TransientGenerationError is retried with exponential
    backoff up to `max_retries` total attempts; exhausted batches yield
    failed(unreachable) results. Unparseable or missing responses yield
    failed(parse_error) / failed(no_response) without retry, since a
    malformed answer will not improve by asking again.
    """
    if max_retries < 1:
        raise ValueError("max_retries must be >= 1")
    if batch < 1:
        raise ValueError("batch must be >= 1")
    results: list[GenerationResult | None] = [None] * len(requests)
    for start in range(0, len(requests), batch):
        chunk = list(enumerate(requests[start : start + batch], start=start))
        wire = [
            {"id": f"{pos:08d}", "prompt": req.prompt} for pos, req in chunk
        ]
        responses = None
        attempts = 0
        last_error = ""
        for attempt in range(1, max_retries + 1):
            attempts = attempt
            try:
                responses = client.send_batch(wire)
                break
            except TransientGenerationError as exc:
                last_error = str(exc)
                if attempt < max_retries:
                    sleep(backoff_base * (2 ** (attempt - 1)))
        if responses is None:
            for pos, req in chunk:
                results[pos] = GenerationResult(
                    req.image_id, "", status_failed(f"unreachable: {last_error}"),
                    attempts,
                )
            continue
        matched: dict[str, str] = {}
        saw_parse_error = False
        for item in responses:
            try:
                wire_id, text = _response_entry(item)
            except (GenerationParseError, json.JSONDecodeError):
                saw_parse_error = True
                continue
            matched[wire_id] = text
        for pos, req in chunk:
            wire_id = f"{pos:08d}"
            if wire_id in matched:
                text = matched[wire_id]
                if text:
                    results[pos] = GenerationResult(
                        req.image_id, text, STATUS_OK, attempts
                    )
                else:
                    results[pos] = GenerationResult(
                        req.image_id, "", status_failed("empty_text"), attempts
                    )
            else:
                reason = "parse_error" if saw_parse_error else "no_response"
                results[pos] = GenerationResult(
                    req.image_id, "", status_failed(reason), attempts
                )
    return [r for r in results if r is not None]


# ---------------------------------------------------------------------------
# input file readers


def read_captions(path) -> dict[str, str]:
    """captions.jsonl: {"image_id","caption"} — duplicate ids are fatal."""
    out: dict[str, str] = {}
    for rec in read_jsonl(path):
        image_id, caption = rec["image_id"], rec["caption"]
        if image_id in out:
            raise ValueError(f"duplicate caption for image {image_id!r}")
        out[image_id] = caption
    return out


def read_image_tags(path) -> dict[str, list[str]]:
    """tags.jsonl: {"image_id","tags":[...]} — duplicate ids are fatal."""
    out: dict[str, list[str]] = {}
    for rec in read_jsonl(path):
        image_id = rec["image_id"]
        if image_id in out:
            raise ValueError(f"duplicate tags for image {image_id!r}")
        tags = rec["tags"]
        if not isinstance(tags, list):
            raise ValueError(f"tags for image {image_id!r} is not a list")
        out[image_id] = [str(t) for t in tags]
    return out


def read_base_tags(path) -> list[str]:
    """base_tags.txt: one tag per line, order preserved, duplicates fatal."""
    tags: list[str] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            tag = line.strip()
            if not tag or tag.startswith("#"):
                continue
            if tag in seen:
                raise ValueError(f"duplicate base tag {tag!r}")
            seen.add(tag)
            tags.append(tag)
    return tags
