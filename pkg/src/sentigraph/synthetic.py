"""Templated review benchmark with synonym groups, polarity context and label imbalance."""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import tokenize
from .downstream import ClassificationExample, ExtractionExample, save_task_data
from .term_extraction import Lexicon, TermKind

logger = logging.getLogger(__name__)

POSITIVE, NEGATIVE = "positive", "negative"

ASPECT_GROUPS = (
    ("color", "colour", "shade"),
    ("material", "fabric", "cloth"),
    ("price", "cost"),
    ("size", "fit"),
    ("delivery", "shipping", "packaging"),
    ("screen", "display"),
    ("battery", "charger"),
)
SENTIMENT_GROUPS = {
    POSITIVE: (
        ("great", "good", "excellent"),
        ("lovely", "beautiful", "pretty"),
        ("sturdy", "solid", "durable"),
        ("fast", "quick", "prompt"),
        ("soft", "comfortable", "cozy"),
    ),
    NEGATIVE: (
        ("bad", "poor", "terrible"),
        ("ugly", "dull", "faded"),
        ("flimsy", "fragile", "weak"),
        ("slow", "late", "delayed"),
        ("rough", "scratchy", "stiff"),
    ),
}
# Only in the unlabeled corpus: they tie sentiment words to their polarity.
CONTEXT_PHRASES = {
    POSITIVE: ("i love it", "highly recommend", "will buy again", "very happy", "five stars"),
    NEGATIVE: ("i returned it", "what a waste", "never again", "very disappointed", "one star"),
}
CLAUSE_TEMPLATES = ("the {aspect} is {sentiment}", "{sentiment} {aspect}", "the {aspect} looks {sentiment}")
FILLERS = ("overall", "honestly", "well", "so")


@dataclass
class SyntheticBenchmark:
    corpus_lines: list[str]
    lexicon: Lexicon
    sentence: list[ClassificationExample]
    aspect: list[ClassificationExample]
    extraction: list[ExtractionExample]

    def write(self, directory: Path | str) -> dict[str, Path]:
        """Write ``corpus.txt``, ``lexicon.tsv`` and one JSON-lines file per task."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {
            "corpus": directory / "corpus.txt",
            "lexicon": directory / "lexicon.tsv",
            "sentence": directory / "sentence.jsonl",
            "aspect": directory / "aspect.jsonl",
            "extraction": directory / "extraction.jsonl",
        }
        paths["corpus"].write_text("\n".join(self.corpus_lines) + "\n", encoding="utf-8")
        self.lexicon.save(paths["lexicon"])
        save_task_data(self.sentence, paths["sentence"])
        save_task_data(self.aspect, paths["aspect"])
        save_task_data(self.extraction, paths["extraction"])
        return paths


def synthetic_lexicon() -> Lexicon:
    aspects = [word for group in ASPECT_GROUPS for word in group]
    sentiments = [word for groups in SENTIMENT_GROUPS.values() for group in groups for word in group]
    return Lexicon(aspects, sentiments)


class _Sampler:
    def __init__(self, rng: np.random.Generator, imbalance: float):
        self.rng = rng
        self.p_positive = imbalance / (imbalance + 1.0)

    def pick(self, options):
        return options[self.rng.integers(len(options))]

    def polarity(self) -> str:
        return POSITIVE if self.rng.random() < self.p_positive else NEGATIVE

    def aspect(self, exclude: str | None = None) -> str:
        groups = [group for group in ASPECT_GROUPS if exclude not in group]
        return self.pick(self.pick(groups))

    def sentiment(self, polarity: str) -> str:
        return self.pick(self.pick(SENTIMENT_GROUPS[polarity]))

    def clause(self, aspect: str, polarity: str) -> str:
        return self.pick(CLAUSE_TEMPLATES).format(aspect=aspect, sentiment=self.sentiment(polarity))


def generate_benchmark(
    n_corpus: int = 3000, n_task: int = 2000, imbalance: float = 10.0, seed: int = 0
) -> SyntheticBenchmark:
    """Generate the unlabeled corpus, lexicon and the three task datasets.

    Parameters
    ----------
    n_corpus : int
        Number of unlabeled review lines.
    n_task : int
        Number of examples per task.
    imbalance : float
        Positive-to-negative ratio of the review polarities.
    seed : int
        Seed of the generator; identical seeds give identical benchmarks.
    """
    if imbalance <= 0:
        raise ValueError(f"imbalance must be positive, got {imbalance}")
    s = _Sampler(np.random.default_rng(seed), imbalance)
    lexicon = synthetic_lexicon()

    corpus_lines = []
    for _ in range(n_corpus):
        polarity = s.polarity()
        first = s.aspect()
        clauses = [s.clause(first, polarity), s.clause(s.aspect(exclude=first), polarity)]
        corpus_lines.append(f"{clauses[0]} and {clauses[1]} . {s.pick(CONTEXT_PHRASES[polarity])} !")

    sentence = []
    for _ in range(n_task):
        polarity = s.polarity()
        text = f"{s.pick(FILLERS)} {s.clause(s.aspect(), polarity)} ."
        sentence.append(ClassificationExample(text, polarity))

    aspect = []
    for _ in range(n_task):
        polarity, other = s.polarity(), s.polarity()
        target = s.aspect()
        distractor = s.aspect(exclude=target)
        clauses = [s.clause(target, polarity), s.clause(distractor, other)]
        if s.rng.random() < 0.5:
            clauses.reverse()
        aspect.append(ClassificationExample(f"{clauses[0]} but {clauses[1]} .", polarity, target))

    extraction = []
    for _ in range(n_task):
        polarity = s.polarity()
        first = s.aspect()
        sentence_text = f"{s.clause(first, polarity)} and {s.clause(s.aspect(exclude=first), polarity)} ."
        tokenized = tokenize(sentence_text)
        tags = ["O"] * len(tokenized)
        for span in lexicon.tag(tokenized):
            kind = "aspect" if span.kind is TermKind.ASPECT else "sentiment"
            tags[span.first] = f"B-{kind}"
            for i in range(span.first + 1, span.last + 1):
                tags[i] = f"I-{kind}"
        extraction.append(ExtractionExample(tuple(tokenized.words), tuple(tags)))

    logger.info(f"Generated synthetic benchmark: {n_corpus} corpus lines, {n_task} examples per task")
    return SyntheticBenchmark(corpus_lines, lexicon, sentence, aspect, extraction)
