"""Quality filters for images and sentences.

Images pass on size and aspect-ratio rules. Sentences pass four layers:
surface rules (URL, emoji, word count, complexity), a corpus-level
information-entropy floor, a language-model perplexity interval, and —
after pairing — a semantic-similarity band. Every decision is recorded
as a FilterVerdict so stage accounting always balances.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from typing import Callable, Iterable, Protocol, Sequence

from .corpus import ImageRecord, SentenceRecord

# Rejection reasons. Verdict streams are partitioned by these strings,
# so they are part of the on-disk contract.
REASON_TOO_FEW_WORDS = "too_few_words"
REASON_TOO_MANY_WORDS = "too_many_words"
REASON_EMOJI = "emoji"
REASON_URL = "url"
REASON_COMPLEXITY = "complexity"
REASON_LOW_ENTROPY = "low_entropy"
REASON_PPL = "perplexity_out_of_range"
REASON_SIZE = "size"
REASON_ASPECT = "aspect_ratio"
REASON_BAND = "band"

REASONS = frozenset(
    {
        REASON_TOO_FEW_WORDS,
        REASON_TOO_MANY_WORDS,
        REASON_EMOJI,
        REASON_URL,
        REASON_COMPLEXITY,
        REASON_LOW_ENTROPY,
        REASON_PPL,
        REASON_SIZE,
        REASON_ASPECT,
        REASON_BAND,
    }
)


@dataclass(frozen=True)
class FilterVerdict:
    id: str
    kept: bool
    reason: str | None = None
    score: float | None = None

    def __post_init__(self):
        if self.kept and self.reason is not None:
            raise ValueError(f"verdict for {self.id!r}: kept records carry no reason")
        if not self.kept:
            if self.reason not in REASONS:
                raise ValueError(
                    f"verdict for {self.id!r}: unknown reason {self.reason!r}"
                )

    def to_json(self) -> dict:
        obj: dict = {"id": self.id, "kept": self.kept}
        if self.reason is not None:
            obj["reason"] = self.reason
        if self.score is not None:
            obj["score"] = self.score
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "FilterVerdict":
        return cls(
            id=obj["id"],
            kept=obj["kept"],
            reason=obj.get("reason"),
            score=obj.get("score"),
        )


# ---------------------------------------------------------------------------
# image rules


def image_rule_filter(
    img: ImageRecord, min_short_side: int = 100, max_aspect: float = 3.0
) -> FilterVerdict:
    """Keep images whose short side and aspect ratio are both acceptable.

    The aspect comparison is exact rational arithmetic: 301x100 is
    rejected because 301/100 > 3, with no float rounding involved.
    """
    w, h = img.width, img.height
    if min(w, h) < min_short_side:
        return FilterVerdict(img.image_id, False, REASON_SIZE)
    if Fraction(max(w, h), min(w, h)) > Fraction(str(max_aspect)):
        return FilterVerdict(img.image_id, False, REASON_ASPECT)
    return FilterVerdict(img.image_id, True)


# ---------------------------------------------------------------------------
# sentence surface rules

_EMOJI_RANGES = ((0x1F300, 0x1FAFF), (0x2600, 0x27BF), (0xFE0F, 0xFE0F))

# ASCII punctuation stripped from token edges before lexicon lookups
TOKEN_STRIP_CHARS = "".join(
    chr(c) for c in range(0x21, 0x7F) if not chr(c).isalnum()
)


def _contains_emoji(text: str) -> bool:
    for ch in text:
        cp = ord(ch)
        for lo, hi in _EMOJI_RANGES:
            if lo <= cp <= hi:
                return True
    return False


def _contains_url(tokens: Sequence[str]) -> bool:
    for tok in tokens:
        if "://" in tok or tok.lower().startswith("www."):
            return True
    return False


def _load_lexicon(name: str) -> frozenset[str]:
    text = resources.files("rsforge.data").joinpath(name).read_text("utf-8")
    out = set()
    for line in text.splitlines():
        line = line.strip().lower()
        if line and not line.startswith("#"):
            out.add(line)
    return frozenset(out)


ACTION_VERBS = _load_lexicon("action_verbs.txt")
STOPWORDS = _load_lexicon("stopwords.txt")


def default_complexity(text: str) -> bool:
    """Minimum-complexity heuristic: an action verb plus five tokens."""
    tokens = text.split()
    if len(tokens) < 5:
        return False
    for tok in tokens:
        if tok.lower().strip(TOKEN_STRIP_CHARS) in ACTION_VERBS:
            return True
    return False


ComplexityAssessor = Callable[[str], bool]


def sentence_rule_filter(
    s: SentenceRecord,
    min_words: int = 3,
    max_words: int = 81,
    complexity: ComplexityAssessor = default_complexity,
) -> FilterVerdict:
    """Apply surface rules in fixed order: url, emoji, word count, complexity.

    Words are whitespace-delimited tokens; bounds are inclusive.
    """
    tokens = s.text.split()
    if _contains_url(tokens):
        return FilterVerdict(s.sentence_id, False, REASON_URL)
    if _contains_emoji(s.text):
        return FilterVerdict(s.sentence_id, False, REASON_EMOJI)
    if len(tokens) < min_words:
        return FilterVerdict(s.sentence_id, False, REASON_TOO_FEW_WORDS)
    if len(tokens) > max_words:
        return FilterVerdict(s.sentence_id, False, REASON_TOO_MANY_WORDS)
    if not complexity(s.text):
        return FilterVerdict(s.sentence_id, False, REASON_COMPLEXITY)
    return FilterVerdict(s.sentence_id, True)


# ---------------------------------------------------------------------------
# corpus statistics and information entropy


@dataclass(frozen=True)
class CorpusStats:
    unigram_counts: dict[str, int]
    total_tokens: int

    def __post_init__(self):
        if self.total_tokens != sum(self.unigram_counts.values()):
            raise ValueError("total_tokens disagrees with unigram counts")
        for word, count in self.unigram_counts.items():
            if count < 1:
                raise ValueError(f"word {word!r} has non-positive count {count}")

    @property
    def vocab_size(self) -> int:
        return len(self.unigram_counts)


def tokenize(text: str) -> list[str]:
    """Lowercased whitespace tokenization used by all text scorers."""
    return text.lower().split()


def build_corpus_stats(sentences: Iterable[str]) -> CorpusStats:
    counts: Counter[str] = Counter()
    for text in sentences:
        counts.update(tokenize(text))
    return CorpusStats(dict(counts), sum(counts.values()))


def entropy_score(text: str, stats: CorpusStats) -> float:
    """Information content of a sentence under corpus unigram frequencies.

    Sums -p * ln(p) over word occurrences, where p is the word's corpus
    frequency; unseen words get the add-one floor 1/(total + vocab + 1).
    Longer sentences of informative words score higher; an empty sentence
    scores 0.
    """
    tokens = tokenize(text)
    if not tokens:
        return 0.0
    unseen_p = 1.0 / (stats.total_tokens + stats.vocab_size + 1)
    total = stats.total_tokens
    score = 0.0
    for tok in tokens:
        count = stats.unigram_counts.get(tok)
        p = count / total if count else unseen_p
        score += -p * math.log(p)
    return score


def entropy_filter(
    s: SentenceRecord, stats: CorpusStats, threshold: float = 0.3
) -> FilterVerdict:
    score = entropy_score(s.text, stats)
    if score < threshold:
        return FilterVerdict(s.sentence_id, False, REASON_LOW_ENTROPY, score)
    return FilterVerdict(s.sentence_id, True, score=score)


# ---------------------------------------------------------------------------
# language-model perplexity


class LmScorer(Protocol):
    """Anything that maps a token sequence to per-token log-likelihoods."""

    def score(self, tokens: Sequence[str]) -> list[float]: ...


@dataclass(frozen=True)
class UniformScorer:
    """Assigns every token probability 1/vocab_size; PPL equals vocab_size."""

    vocab_size: int

    def __post_init__(self):
        if self.vocab_size < 1:
            raise ValueError("vocab_size must be >= 1")

    def score(self, tokens: Sequence[str]) -> list[float]:
        ll = -math.log(self.vocab_size)
        return [ll] * len(tokens)


_BOS = "<s>"
_UNK = "<unk>"


@dataclass(frozen=True)
class BigramLm:
    """Add-k bigram model over lowercased whitespace tokens.

    p(tok | ctx) = (count(ctx, tok) + k) / (count(ctx) + k * (|vocab| + 1));
    the +1 slot is <unk>, which also absorbs out-of-vocabulary tokens at
    scoring time. Contexts never seen fall back to the uniform floor.
    """

    vocab: frozenset[str]
    bigram_counts: dict[tuple[str, str], int]
    context_counts: dict[str, int]
    k: float = 1.0

    def _map(self, token: str) -> str:
        return token if token in self.vocab else _UNK

    def prob(self, context: str, token: str) -> float:
        ctx = self._map(context) if context != _BOS else _BOS
        tok = self._map(token)
        slots = len(self.vocab) + 1
        num = self.bigram_counts.get((ctx, tok), 0) + self.k
        den = self.context_counts.get(ctx, 0) + self.k * slots
        return num / den

    def score(self, tokens: Sequence[str]) -> list[float]:
        out = []
        prev = _BOS
        for tok in tokens:
            out.append(math.log(self.prob(prev, tok)))
            prev = tok
        return out


def train_ngram_lm(sentences: Iterable[str], k: float = 1.0) -> BigramLm:
    """Fit the add-k bigram model on lowercased whitespace tokens."""
    vocab: set[str] = set()
    bigram_counts: Counter[tuple[str, str]] = Counter()
    context_counts: Counter[str] = Counter()
    n_sentences = 0
    for text in sentences:
        tokens = tokenize(text)
        if not tokens:
            continue
        n_sentences += 1
        vocab.update(tokens)
        prev = _BOS
        for tok in tokens:
            bigram_counts[(prev, tok)] += 1
            context_counts[prev] += 1
            prev = tok
    if n_sentences == 0:
        raise ValueError("cannot train a language model on an empty corpus")
    return BigramLm(frozenset(vocab), dict(bigram_counts), dict(context_counts), k)


def perplexity_score(text: str, lm: LmScorer) -> float:
    """exp of the negative mean token log-likelihood."""
    tokens = tokenize(text)
    if not tokens:
        raise ValueError("perplexity of a zero-token sentence is undefined")
    lls = lm.score(tokens)
    if len(lls) != len(tokens):
        raise ValueError(
            f"scorer returned {len(lls)} log-likelihoods for {len(tokens)} tokens"
        )
    return math.exp(-math.fsum(lls) / len(tokens))


def perplexity_filter(
    s: SentenceRecord, lm: LmScorer, lo: float = 30.0, hi: float = 200.0
) -> FilterVerdict:
    score = perplexity_score(s.text, lm)
    if lo <= score <= hi:
        return FilterVerdict(s.sentence_id, True, score=score)
    return FilterVerdict(s.sentence_id, False, REASON_PPL, score)


# ---------------------------------------------------------------------------
# semantic-similarity band


def band_gate(score: float, lo: float = 0.51, hi: float = 0.61) -> bool:
    """Keep iff lo <= score <= hi; both boundaries are inside the band."""
    if not -1.0 - 1e-6 <= score <= 1.0 + 1e-6:
        raise ValueError(f"cosine score {score} outside [-1, 1]")
    return lo <= score <= hi


def band_filter(
    record_id: str, score: float, lo: float = 0.51, hi: float = 0.61
) -> FilterVerdict:
    if band_gate(score, lo, hi):
        return FilterVerdict(record_id, True, score=score)
    return FilterVerdict(record_id, False, REASON_BAND, score)
