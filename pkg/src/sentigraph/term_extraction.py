"""Lexicon-based aspect/sentiment tagging and one-to-one pair matching."""

import json
import logging
from collections import Counter
from collections.abc import Iterable
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .corpus import Corpus, Sentence, tokenize

logger = logging.getLogger(__name__)


class TermKind(str, Enum):
    """Node and span type."""

    ASPECT = "aspect"
    SENTIMENT = "sentiment"


class LexiconError(ValueError):
    """Raised for malformed or conflicting lexicon definitions."""


@dataclass(frozen=True)
class TermSpan:
    """An inclusive token range tagged as aspect or sentiment."""

    sentence_ref: int
    token_range: tuple[int, int]
    kind: TermKind
    text: str

    @property
    def first(self) -> int:
        return self.token_range[0]

    @property
    def last(self) -> int:
        return self.token_range[1]

    def to_dict(self) -> dict:
        return {
            "sentence": self.sentence_ref,
            "first": self.first,
            "last": self.last,
            "kind": self.kind.value,
            "text": self.text,
        }


@dataclass(frozen=True)
class AspectSentimentPair:
    aspect: TermSpan
    sentiment: TermSpan
    distance: int

    def to_dict(self) -> dict:
        return {
            "sentence": self.aspect.sentence_ref,
            "aspect": self.aspect.text,
            "sentiment": self.sentiment.text,
            "distance": self.distance,
        }


def _phrase_key(term: str) -> tuple[str, ...]:
    return tuple(tokenize(term.lower()).words)


class Lexicon:
    """Aspect and sentiment term lists indexed for longest-match tagging."""

    def __init__(self, aspects: Iterable[str], sentiments: Iterable[str]):
        self.aspects = {" ".join(_phrase_key(term)) for term in aspects if term.strip()}
        self.sentiments = {" ".join(_phrase_key(term)) for term in sentiments if term.strip()}
        overlap = self.aspects & self.sentiments
        if overlap:
            raise LexiconError(f"Terms defined as both aspect and sentiment: {sorted(overlap)}")
        self._index: dict[tuple[str, ...], TermKind] = {}
        for term in self.aspects:
            self._index[tuple(term.split(" "))] = TermKind.ASPECT
        for term in self.sentiments:
            self._index[tuple(term.split(" "))] = TermKind.SENTIMENT
        self.max_words = max((len(key) for key in self._index), default=0)

    def __len__(self) -> int:
        return len(self._index)

    def kind_of(self, term: str) -> TermKind | None:
        return self._index.get(_phrase_key(term))

    def terms(self, kind: TermKind) -> list[str]:
        return sorted(self.aspects if kind is TermKind.ASPECT else self.sentiments)

    @classmethod
    def load(cls, path: Path | str) -> "Lexicon":
        """Load a TSV lexicon of `word_or_phrase \\t kind` rows.

        Raises
        ------
        LexiconError
            If a row is malformed, names an unknown kind, or a term is listed under both kinds.
        """
        kinds: dict[str, tuple[TermKind, int]] = {}
        for line_number, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise LexiconError(f"line {line_number}: expected 'term<TAB>kind', got {line!r}")
            term, kind_name = parts[0].strip().lower(), parts[1].strip().lower()
            try:
                kind = TermKind(kind_name)
            except ValueError as e:
                raise LexiconError(f"line {line_number}: unknown kind {kind_name!r}") from e
            if term in kinds and kinds[term][0] is not kind:
                raise LexiconError(
                    f"line {line_number}: {term!r} already defined as {kinds[term][0].value} on line {kinds[term][1]}"
                )
            kinds[term] = (kind, line_number)
        lexicon = cls(
            [term for term, (kind, _) in kinds.items() if kind is TermKind.ASPECT],
            [term for term, (kind, _) in kinds.items() if kind is TermKind.SENTIMENT],
        )
        logger.info(f"Loaded lexicon with {len(lexicon.aspects)} aspects and {len(lexicon.sentiments)} sentiments")
        return lexicon

    def save(self, path: Path | str) -> None:
        rows = [f"{term}\t{TermKind.ASPECT.value}" for term in sorted(self.aspects)]
        rows += [f"{term}\t{TermKind.SENTIMENT.value}" for term in sorted(self.sentiments)]
        Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")

    def tag(self, sentence: Sentence, sentence_ref: int = 0) -> list[TermSpan]:
        """Longest-match-first, left-to-right tagging."""
        words = sentence.words
        spans = []
        i = 0
        while i < len(words):
            for width in range(min(self.max_words, len(words) - i), 0, -1):
                key = tuple(words[i : i + width])
                kind = self._index.get(key)
                if kind is not None:
                    spans.append(TermSpan(sentence_ref, (i, i + width - 1), kind, " ".join(key)))
                    i += width
                    break
            else:
                i += 1
        return spans


def tag_terms(
    sentence: Sentence, aspect_lexicon: Iterable[str], sentiment_lexicon: Iterable[str], sentence_ref: int = 0
) -> list[TermSpan]:
    """Tag the maximal non-overlapping lexicon matches of a sentence.

    Parameters
    ----------
    sentence : Sentence
        Tokenized sentence.
    aspect_lexicon, sentiment_lexicon : Iterable[str]
        Disjoint term lists; entries may be multi-word phrases.
    sentence_ref : int
        Identifier stored on every returned span.

    Returns
    -------
    list[TermSpan]
        Spans in left-to-right order.
    """
    return Lexicon(aspect_lexicon, sentiment_lexicon).tag(sentence, sentence_ref)


def span_distance(a: TermSpan, b: TermSpan) -> int:
    """Number of tokens strictly between two non-overlapping spans."""
    if a.last < b.first:
        return b.first - a.last - 1
    return a.first - b.last - 1


def match_pairs(spans: list[TermSpan], strategy: str = "optimal") -> list[AspectSentimentPair]:
    """Match each sentiment span with its nearest aspect span, one-to-one.

    Parameters
    ----------
    spans : list[TermSpan]
        Spans of a single sentence.
    strategy : str
        ``"greedy"`` takes candidate pairs in ascending distance, ties going to the
        leftmost sentiment then the leftmost aspect. ``"optimal"`` (default) returns
        the one-to-one matching of minimum total distance, with the same tie
        preference, using an assignment solver.

    Returns
    -------
    list[AspectSentimentPair]
        Pairs ordered by sentiment position.
    """
    if strategy not in ("greedy", "optimal"):
        raise ValueError(f"Invalid strategy: {strategy}. Must be 'greedy' or 'optimal'")
    aspects = [span for span in spans if span.kind is TermKind.ASPECT]
    sentiments = [span for span in spans if span.kind is TermKind.SENTIMENT]
    if not aspects or not sentiments:
        return []
    if len({span.sentence_ref for span in spans}) > 1:
        raise ValueError("match_pairs expects spans from a single sentence")

    if strategy == "greedy":
        candidates = sorted(
            ((span_distance(a, s), s.first, a.first, ai, si) for ai, a in enumerate(aspects) for si, s in enumerate(sentiments))
        )
        used_a: set[int] = set()
        used_s: set[int] = set()
        pairs = []
        for distance, _, _, ai, si in candidates:
            if ai in used_a or si in used_s:
                continue
            used_a.add(ai)
            used_s.add(si)
            pairs.append(AspectSentimentPair(aspects[ai], sentiments[si], distance))
    else:
        distances = np.array([[span_distance(a, s) for s in sentiments] for a in aspects], dtype=np.int64)
        # lexicographic cost: total distance first, then leftmost sentiment, then leftmost aspect
        positions = max(span.last for span in spans) + 1
        tie_scale = positions * positions + positions + 1
        scale = tie_scale * (min(len(aspects), len(sentiments)) + 1)
        tie = np.array([[s.first * positions + a.first for s in sentiments] for a in aspects], dtype=np.int64)
        rows, cols = linear_sum_assignment(distances * scale + tie)
        pairs = [AspectSentimentPair(aspects[r], sentiments[c], int(distances[r, c])) for r, c in zip(rows, cols)]
    return sorted(pairs, key=lambda pair: pair.sentiment.first)


class PairCounter(Counter):
    """Occurrence counts of (aspect text, sentiment text)."""

    def update_pairs(self, pairs: Iterable[AspectSentimentPair]) -> None:
        self.update((pair.aspect.text, pair.sentiment.text) for pair in pairs)


@dataclass
class TaggedCorpus:
    """Per-sentence spans and pairs of a corpus, in corpus sentence order."""

    sentences: list[Sentence]
    spans: list[list[TermSpan]]
    pairs: list[list[AspectSentimentPair]]

    def pair_counts(self) -> PairCounter:
        counter = PairCounter()
        for pairs in self.pairs:
            counter.update_pairs(pairs)
        return counter

    def dump(self, spans_path: Path | str, pairs_path: Path | str) -> None:
        """Write the tagged sentences and the pairs as JSON-lines."""
        with open(spans_path, "w", encoding="utf-8") as f:
            for ref, (sentence, spans) in enumerate(zip(self.sentences, self.spans)):
                record = {"sentence": ref, "doc_id": sentence.doc_id, "text": sentence.text}
                record["spans"] = [span.to_dict() for span in spans]
                f.write(json.dumps(record, ensure_ascii=False) + "\n")
        with open(pairs_path, "w", encoding="utf-8") as f:
            for pairs in self.pairs:
                for pair in pairs:
                    f.write(json.dumps(pair.to_dict(), ensure_ascii=False) + "\n")


def tag_corpus(corpus: Corpus, lexicon: Lexicon, strategy: str = "optimal") -> TaggedCorpus:
    """Tag every corpus sentence and match its pairs."""
    sentences = list(corpus.sentences())
    spans = [lexicon.tag(sentence, ref) for ref, sentence in enumerate(sentences)]
    pairs = [match_pairs(sentence_spans, strategy=strategy) for sentence_spans in spans]
    logger.info(
        f"Tagged {sum(len(s) for s in spans)} spans and matched {sum(len(p) for p in pairs)} pairs "
        f"in {len(sentences)} sentences"
    )
    return TaggedCorpus(sentences, spans, pairs)


def extract_pairs(corpus: Corpus, lexicon: Lexicon, strategy: str = "optimal") -> list[AspectSentimentPair]:
    """All matched pairs of a corpus, in sentence order."""
    return [pair for pairs in tag_corpus(corpus, lexicon, strategy).pairs for pair in pairs]
