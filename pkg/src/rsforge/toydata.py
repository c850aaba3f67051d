"""Self-contained toy workspace generator for end-to-end runs.

Builds a deterministic 200-document corpus with synthetic embeddings
sized so that every pipeline stage has real work to do:

* eight disjoint topics with orthonormal direction vectors; image and
  sentence embeddings are noisy copies of their topic direction;
* planted rule violations (URLs, emoji, too short/long, verbless),
  low-entropy gibberish, scrambled word-salad (high perplexity), one
  sentence repeated verbatim across documents (low perplexity), and
  near-duplicate image/sentence pairs for the dedup stages;
* a word-vector store mapping each topic's nouns to the exact topic
  direction, so the lexicon encoder recovers the topic from generated
  captions and the similarity gate sees scores on both sides of the
  keep band;
* captions, per-image tags, base tags, and a ready-to-run config.

Everything derives from one seed; two calls with the same arguments
produce byte-identical files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Document, ImageRef, TextBlock, extract
from .filters import ACTION_VERBS
from .ioutil import dumps_canonical, ensure_dir, write_jsonl
from .store import EmbeddingStore, write_store

__all__ = ["ToyPaths", "make_toy_workspace"]

DIM = 32
N_TOPICS = 8

TOPICS: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("astronomy", ("nebula", "crater", "comet", "quasar", "eclipse", "aurora",
                   "meteor", "orbit", "telescope", "galaxy")),
    ("ocean", ("lagoon", "coral", "tide", "kelp", "reef", "plankton",
               "seagull", "driftwood", "anemone", "sandbar")),
    ("forest", ("fern", "moss", "canopy", "thicket", "birch", "lichen",
                "acorn", "bramble", "toadstool", "undergrowth")),
    ("desert", ("dune", "cactus", "mirage", "oasis", "mesa", "scorpion",
                "tumbleweed", "gulch", "sandstone", "canyon")),
    ("city", ("tram", "plaza", "skyline", "subway", "awning", "kiosk",
              "billboard", "crosswalk", "rooftop", "alleyway")),
    ("kitchen", ("skillet", "ladle", "saucepan", "spice", "oven", "whisk",
                 "cutlery", "teapot", "colander", "griddle")),
    ("music", ("cello", "tempo", "chorus", "violin", "drumbeat", "melody",
               "oboe", "harmonica", "songbook", "orchestra")),
    ("sports", ("goalie", "stadium", "referee", "trophy", "jersey", "scoreboard",
                "dugout", "bleacher", "scrimmage", "mascot")),
)

VERBS = (
    "sits", "runs", "walks", "jumps", "swims", "climbs", "rests", "floats",
    "glows", "stands", "plays", "rides", "leans", "shines", "waves", "splashes",
)
ADJECTIVES = (
    "bright", "small", "quiet", "old", "pale", "broad", "warm", "thin",
    "faded", "narrow", "gentle", "rough", "shiny", "dusty", "crooked", "vivid",
    "sturdy", "hollow",
)
PREPOSITIONS = (
    "near", "beside", "under", "over", "behind", "against",
    "around", "along", "beyond", "beneath",
)
GENERIC_TAGS = ("landscape", "portrait", "daylight", "outdoor", "indoor", "closeup")

# One fixed sentence repeated across many documents: every bigram becomes
# common in the stand-in language model, pushing perplexity under the
# lower bound while staying well over the entropy threshold.
_REPEATED = (
    "The guide rests beside the path and the guide rests beside the "
    "gate while the lamp glows there."
)


@dataclass(frozen=True)
class ToyPaths:
    root: Path
    documents: Path
    image_embeddings: Path
    sentence_embeddings: Path
    word_vectors: Path
    captions: Path
    tags: Path
    base_tags: Path
    config: Path
    run_dir: Path


def _unit(rng: np.random.Generator) -> np.ndarray:
    vec = rng.standard_normal(DIM)
    return vec / np.linalg.norm(vec)


def _normed(vec: np.ndarray) -> np.ndarray:
    return vec / np.linalg.norm(vec)


def _pick(rng: np.random.Generator, options: Sequence[str]) -> str:
    return options[int(rng.integers(len(options)))]


def _normal_sentence(
    rng: np.random.Generator, nouns: Sequence[str], site: str | None = None
) -> str:
    n1, n2, n3 = (_pick(rng, nouns) for _ in range(3))
    adj, adj2 = _pick(rng, ADJECTIVES), _pick(rng, ADJECTIVES)
    verb, verb2 = _pick(rng, VERBS), _pick(rng, VERBS)
    prep, prep2 = _pick(rng, PREPOSITIONS), _pick(rng, PREPOSITIONS)
    at_site = f" at {site}" if site else ""
    template = int(rng.integers(7))
    if template == 0:
        return f"The {adj} {n1} {verb} {prep} the {n2}{at_site} today."
    if template == 1:
        return f"A {n1} {verb} {prep} the {adj} {n2} while the {n3} {verb2} nearby."
    if template == 2:
        return f"Many {n1} {verb} {prep} the {n2} and the {adj} {n3} {verb2}{at_site} there."
    if template == 3:
        return f"The {n1} {verb} here and a {adj2} {n2} {verb2} {prep} the {n3}."
    if template == 4:
        return f"Some {adj} {n1} {verb} {prep} the {adj2} {n2}{at_site} every morning."
    if template == 5:
        return f"One {n1} {verb} {prep2} a {adj} {n2} and many {n3} {verb2} {prep} it."
    return f"The {n2} {verb} often and the {n1} {verb2} {prep} the {adj} {n3}."


def _word_salad(rng: np.random.Generator, nouns: Sequence[str], index: int) -> str:
    """Common words in transitions that never occur in real sentences.

    "the <verb>" almost never appears elsewhere, while "the" itself is
    the most frequent context, so the add-one bigram model assigns these
    transitions very low probability and the perplexity filter rejects
    the sentence from above.  Each salad steps through its own verb
    window so no transition accumulates counts across documents.
    """
    step = 5 * index
    verbs = [VERBS[(step + j) % len(VERBS)] for j in range(5)]
    noun = _pick(rng, nouns)
    chain = " ".join(f"the {verb}" for verb in verbs)
    return f"{noun.capitalize()} {chain} there."


def _gibberish_sentence(rng: np.random.Generator, marker: int) -> str:
    verb = _pick(rng, VERBS)
    rare = [f"zq{marker}x{i}{'aeiou'[int(rng.integers(5))]}" for i in range(4)]
    return f"{rare[0].capitalize()} {rare[1]} {verb} {rare[2]} {rare[3]}."


def _long_sentence(nouns: Sequence[str]) -> str:
    body = " ".join(f"the {nouns[i % len(nouns)]} rests" for i in range(27))
    return f"The parade begins and {body}."  # 85 words: over the cap


def make_toy_workspace(
    directory: str | Path, seed: int = 7, n_docs: int = 200
) -> ToyPaths:
    """Generate the toy corpus, embeddings, side files, and config."""
    missing = [v for v in VERBS if v not in ACTION_VERBS]
    if missing:  # guards the complexity filter against lexicon drift
        raise RuntimeError(f"toy verbs missing from action lexicon: {missing}")

    root = ensure_dir(Path(directory))
    rng = np.random.default_rng(seed)
    topic_dirs = np.linalg.qr(rng.standard_normal((DIM, DIM)))[0][:, :N_TOPICS].T

    docs: list[Document] = []
    sentence_meta: list[dict] = []  # parallel to extracted sentence order
    image_meta: list[dict] = []  # parallel to extracted image order
    image_counter = 0
    site_counter = 0

    def next_site() -> str:
        # Unique per sentence: digits keep it out of the tag lexicon while
        # it widens the bigram vocabulary the perplexity model smooths over.
        nonlocal site_counter
        site_counter += 1
        return f"spot{site_counter:04d}"

    def next_image(topic: int, kind: str, width: int, height: int) -> ImageRef:
        nonlocal image_counter
        image_id = f"img{image_counter:04d}"
        image_counter += 1
        image_meta.append({"id": image_id, "topic": topic, "kind": kind})
        return ImageRef(image_id, width, height, f"toy://{image_id}.jpg")

    for d in range(n_docs):
        topic = d % N_TOPICS
        nouns = TOPICS[topic][1]
        sentences: list[str] = []

        def add(kind: str, text: str) -> None:
            sentences.append(text)
            sentence_meta.append({"topic": topic, "kind": kind})

        for _ in range(3 + d % 2):
            add("normal", _normal_sentence(rng, nouns, site=next_site()))
        if d % 25 == 1:
            add("url", f"Visit https://toy-{d}.example.com/gallery for the full set.")
        if d % 33 == 2:
            add("emoji", f"The {nouns[0]} shines tonight \U0001F31F and everyone cheers.")
        if d % 40 == 5:
            add("short", "Crowd cheers.")
        if d % 50 == 7:
            add("long", _long_sentence(nouns))
        if d % 22 == 9:
            add("no_verb", f"A {nouns[1]} with the {nouns[2]} in view of many people.")
        if d % 28 == 11:
            add("low_entropy", _gibberish_sentence(rng, d))
        if d % 30 == 13:
            add("word_salad", _word_salad(rng, nouns, d // 30))
        if d % 5 == 2:
            add("repeated", _REPEATED)
        if d % 18 == 15:
            base = _normal_sentence(rng, nouns, site=next_site())
            twin = _normal_sentence(rng, nouns, site=next_site())
            add("dup_first", base)
            add("dup_second", twin)

        segments: list[TextBlock | ImageRef] = [TextBlock(" ".join(sentences))]

        width = int(rng.integers(320, 1281))
        height = int(width / float(rng.uniform(1.0, 2.0)))
        segments.append(next_image(topic, "normal", width, max(height, 320)))
        if d % 20 == 3:
            segments.append(next_image(topic, "dup", width, max(height, 320)))
        if d % 23 == 4:
            segments.append(next_image(topic, "undersize", int(rng.integers(40, 100)), 300))
        if d % 29 == 8:
            segments.append(next_image(topic, "wide", 1500, 300))
        if d % 31 == 10:
            segments.append(next_image(topic, "aspect_edge", 900, 300))
        if d % 37 == 12:
            segments.append(next_image(topic, "size_edge", 100, 300))

        docs.append(Document(f"doc{d:04d}", tuple(segments)))

    images, sentences, _ = extract(docs)
    if len(sentences) != len(sentence_meta):
        raise RuntimeError(
            f"sentence bookkeeping out of step: extracted {len(sentences)}, "
            f"generated {len(sentence_meta)}"
        )
    if len(images) != len(image_meta):
        raise RuntimeError("image bookkeeping out of step")

    # --- embeddings -------------------------------------------------------
    sent_rows = np.zeros((len(sentences), DIM), dtype=np.float64)
    for i, meta in enumerate(sentence_meta):
        if meta["kind"] == "dup_second":
            sent_rows[i] = _normed(sent_rows[i - 1] + 0.2 * _unit(rng))
        else:
            sent_rows[i] = _normed(topic_dirs[meta["topic"]] + 1.0 * _unit(rng))
    sentence_store = EmbeddingStore(
        tuple(s.sentence_id for s in sentences),
        sent_rows.astype(np.float32),
        normalized=True,
    )

    img_rows = np.zeros((len(images), DIM), dtype=np.float64)
    for i, meta in enumerate(image_meta):
        if meta["kind"] == "dup":
            img_rows[i] = _normed(img_rows[i - 1] + 0.05 * _unit(rng))
        else:
            sigma = float(rng.uniform(1.0, 2.0))
            img_rows[i] = _normed(topic_dirs[meta["topic"]] + sigma * _unit(rng))
    image_store = EmbeddingStore(
        tuple(r.image_id for r in images), img_rows.astype(np.float32), normalized=True
    )

    word_ids = tuple(noun for _, nouns in TOPICS for noun in nouns)
    word_rows = np.vstack(
        [np.repeat(topic_dirs[t][None, :], len(TOPICS[t][1]), axis=0) for t in range(N_TOPICS)]
    )
    word_store = EmbeddingStore(word_ids, word_rows.astype(np.float32), normalized=True)

    # --- files ------------------------------------------------------------
    paths = ToyPaths(
        root=root,
        documents=root / "documents.jsonl",
        image_embeddings=root / "image_embeddings.rseb",
        sentence_embeddings=root / "sentence_embeddings.rseb",
        word_vectors=root / "word_vectors.rseb",
        captions=root / "captions.jsonl",
        tags=root / "tags.jsonl",
        base_tags=root / "base_tags.txt",
        config=root / "toy.json",
        run_dir=root / "run",
    )

    from .corpus import document_to_json

    lines = [dumps_canonical(document_to_json(doc)) for doc in docs]
    lines.insert(min(50, len(lines)), "this line is not json {")
    lines.insert(min(120, len(lines)), dumps_canonical({"doc_id": 123}))
    paths.documents.write_text("".join(line + "\n" for line in lines), encoding="utf-8")

    write_store(image_store, paths.image_embeddings)
    write_store(sentence_store, paths.sentence_embeddings)
    write_store(word_store, paths.word_vectors)

    captions = []
    tag_rows = []
    for meta in image_meta:
        nouns = TOPICS[meta["topic"]][1]
        captions.append(
            {
                "image_id": meta["id"],
                "caption": f"a photo of the {nouns[0]} and the {nouns[1]} near a {nouns[2]}",
            }
        )
        tag_rows.append({"image_id": meta["id"], "tags": list(nouns[:4])})
    write_jsonl(paths.captions, captions)
    write_jsonl(paths.tags, tag_rows)

    base_tags = [noun for _, nouns in TOPICS for noun in nouns] + list(GENERIC_TAGS)
    paths.base_tags.write_text(
        "# toy base tag list\n" + "".join(t + "\n" for t in base_tags), encoding="utf-8"
    )

    config = {
        "paths": {
            "documents": "documents.jsonl",
            "image_embeddings": "image_embeddings.rseb",
            "sentence_embeddings": "sentence_embeddings.rseb",
            "captions": "captions.jsonl",
            "tags": "tags.jsonl",
            "base_tags": "base_tags.txt",
            "word_vectors": "word_vectors.rseb",
            "run_dir": "run",
        },
        "seed": seed,
        "cluster": {"k_texts": N_TOPICS, "k_images": N_TOPICS},
        "join": {"synthetic_encoder": "lexicon"},
        "sample": {"cap": 8},
    }
    paths.config.write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")
    return paths
