"""Pretraining examples built from the corpus and semantic graph, and the three pretraining losses.

The joint loss is the unweighted sum of

- ``L_sw``: cross-entropy of the original ids at masked sentiment positions,
- ``L_ap``: binary cross-entropy of the pair classifier on the ``[CLS]`` state of
  ``[CLS] aspects [SEP] sentiments [SEP]`` sequences,
- ``L_ns``: a contrastive loss over cosine similarities of mean-pooled word
  representations, with synonyms as positives and unrelated same-kind words as
  negatives.
"""

import json
import logging
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit, log_softmax, logsumexp, softmax

from .corpus import CLS_ID, MASK_ID, SEP_ID, FrequencyTable, Sentence, Vocabulary
from .graph import SemanticGraph, reachable_within, sample_similar_nodes
from .model import Encoder, ParamSet, cosine
from .term_extraction import TermKind, TermSpan

logger = logging.getLogger(__name__)

OBJECTIVES = ("sw", "ap", "ns")


@dataclass(frozen=True)
class PackedSequence:
    """``[CLS]`` followed by one or more whole sentences, with their shifted term spans."""

    ids: tuple[int, ...]
    spans: tuple[TermSpan, ...] = ()
    pairs: tuple[tuple[str, str], ...] = ()

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class MaskedSequence:
    """Input ids with ``[MASK]`` substitutions.

    ``targets`` holds the original id of every position; only positions with
    ``mask == 1`` contribute to the loss.
    """

    input_ids: tuple[int, ...]
    mask: tuple[int, ...]
    targets: tuple[int, ...]

    @property
    def n_masked(self) -> int:
        return sum(self.mask)


@dataclass(frozen=True)
class PairSequence:
    ids: tuple[int, ...]
    label: int
    aspect: str
    sentiment: str
    aspect_words: tuple[str, ...] = ()
    sentiment_words: tuple[str, ...] = ()


@dataclass(frozen=True)
class ContrastiveSet:
    anchor: str
    positives: tuple[str, ...]
    negatives: tuple[str, ...]
    anchor_ids: tuple[int, ...]
    positive_ids: tuple[int, ...]
    negative_ids: tuple[tuple[int, ...], ...]


@dataclass
class LossBreakdown:
    """Per-objective values of one joint-loss evaluation."""

    sw: float = 0.0
    ap: float = 0.0
    ns: float = 0.0

    @property
    def total(self) -> float:
        return self.sw + self.ap + self.ns

    def as_row(self, step: int) -> dict:
        return {"step": step, "L_sw": self.sw, "L_ap": self.ap, "L_ns": self.ns, "L": self.total}


@dataclass
class PretrainBatch:
    masked: list[MaskedSequence] = field(default_factory=list)
    pairs: list[PairSequence] = field(default_factory=list)
    contrastive: list[ContrastiveSet] = field(default_factory=list)


def pack_sentences(
    sentences: Sequence[Sentence],
    spans: Sequence[Sequence[TermSpan]] | None = None,
    pairs: Sequence[Sequence[tuple[str, str]]] | None = None,
    max_len: int = 128,
) -> list[PackedSequence]:
    """Concatenate consecutive sentences after a ``[CLS]`` until ``max_len`` would be exceeded.

    A sentence longer than ``max_len - 1`` is truncated, dropping the spans it loses.
    """
    if max_len < 2:
        raise ValueError(f"max_len must be at least 2, got {max_len}")
    spans = spans if spans is not None else [()] * len(sentences)
    pairs = pairs if pairs is not None else [()] * len(sentences)
    packed: list[PackedSequence] = []
    ids: list[int] = [CLS_ID]
    seq_spans: list[TermSpan] = []
    seq_pairs: list[tuple[str, str]] = []

    def flush():
        if len(ids) > 1:
            packed.append(PackedSequence(tuple(ids), tuple(seq_spans), tuple(seq_pairs)))

    for sentence, sentence_spans, sentence_pairs in zip(sentences, spans, pairs):
        sentence_ids = sentence.ids[: max_len - 1]
        if len(ids) + len(sentence_ids) > max_len:
            flush()
            ids, seq_spans, seq_pairs = [CLS_ID], [], []
        offset = len(ids)
        ids.extend(sentence_ids)
        for span in sentence_spans:
            if span.last < len(sentence_ids):
                shifted = (span.first + offset, span.last + offset)
                seq_spans.append(TermSpan(span.sentence_ref, shifted, span.kind, span.text))
        seq_pairs.extend(sentence_pairs)
    flush()
    return packed


def make_masked_sequence(
    sentence: Sentence | PackedSequence | Sequence[int],
    spans: Iterable[TermSpan],
    rate: float = 0.2,
    rng: np.random.Generator | None = None,
) -> MaskedSequence:
    """Mask sentiment-term positions, in random order, up to ``floor(rate * len)`` of them.

    Other positions are never masked, so a sequence without sentiment terms comes
    back unchanged.
    """
    if not 0.0 < rate <= 1.0:
        raise ValueError(f"Masking rate must be in (0, 1], got {rate}")
    rng = rng if rng is not None else np.random.default_rng()
    ids = list(sentence.ids) if isinstance(sentence, (Sentence, PackedSequence)) else list(sentence)
    budget = int(np.floor(rate * len(ids)))
    positions = sorted(
        {i for span in spans if span.kind is TermKind.SENTIMENT for i in range(span.first, span.last + 1) if i < len(ids)}
    )
    chosen = rng.permutation(positions)[:budget] if positions and budget else []
    mask = [0] * len(ids)
    input_ids = list(ids)
    for i in chosen:
        mask[int(i)] = 1
        input_ids[int(i)] = MASK_ID
    return MaskedSequence(tuple(input_ids), tuple(mask), tuple(ids))


def _encode_words(vocab: Vocabulary, words: Iterable[str]) -> list[int]:
    return [i for word in words for i in vocab.encode(word)]


def _sampled_words(
    graph: SemanticGraph, word: str, max_depth: int, max_length: int, frequencies: FrequencyTable
) -> list[str]:
    sampled = sample_similar_nodes(graph, graph.node_id(word), max_depth, max_length, frequencies)
    if not sampled.words:
        logger.warning(f"Empty neighbourhood for {word!r}, using the word alone")
        return [word]
    return list(sampled.words)


def make_pair_sequence(
    graph: SemanticGraph,
    aspect: str,
    sentiment: str,
    vocab: Vocabulary,
    frequencies: FrequencyTable,
    max_depth: int = 2,
    max_length: int = 5,
    max_len: int = 128,
) -> PairSequence:
    """``[CLS] SA [SEP] SS [SEP]`` for one aspect/sentiment node pair.

    The label is 1 exactly when the graph holds a pair edge between the two words.
    """
    aspect_words = _sampled_words(graph, aspect, max_depth, max_length, frequencies)
    sentiment_words = _sampled_words(graph, sentiment, max_depth, max_length, frequencies)
    budget = (max_len - 3) // 2
    aspect_ids = _encode_words(vocab, aspect_words)[:budget]
    sentiment_ids = _encode_words(vocab, sentiment_words)[:budget]
    ids = (CLS_ID, *aspect_ids, SEP_ID, *sentiment_ids, SEP_ID)
    label = int(graph.has_pair(graph.node_id(aspect), graph.node_id(sentiment)))
    return PairSequence(ids, label, aspect, sentiment, tuple(aspect_words), tuple(sentiment_words))


def make_pair_sequences(
    graph: SemanticGraph,
    pairs: Iterable[tuple[str, str]],
    vocab: Vocabulary,
    frequencies: FrequencyTable,
    rng: np.random.Generator,
    max_depth: int = 2,
    max_length: int = 5,
    n_pairs_max: int = 2,
    max_len: int = 128,
) -> list[PairSequence]:
    """Positive and corrupted pair sequences for up to ``n_pairs_max`` of the given pairs.

    Only pairs joined by a pair edge are used. Each gives one positive sequence and
    one negative sequence whose sentiment is a random sentiment node without a pair
    edge to the aspect.
    """
    candidates = sorted(
        {
            (a, s)
            for a, s in pairs
            if a in graph and s in graph and graph.has_pair(graph.node_id(a), graph.node_id(s))
        }
    )
    if not candidates:
        return []
    chosen = rng.choice(len(candidates), size=min(n_pairs_max, len(candidates)), replace=False)
    sentiments = graph.nodes(TermKind.SENTIMENT)
    sequences = []
    for index in sorted(chosen):
        aspect, sentiment = candidates[index]
        sequences.append(make_pair_sequence(graph, aspect, sentiment, vocab, frequencies, max_depth, max_length, max_len))
        aspect_node = graph.node_id(aspect)
        unpaired = [node for node in sentiments if not graph.has_pair(aspect_node, node)]
        if not unpaired:
            logger.warning(f"No unpaired sentiment left for aspect {aspect!r}, skipping its negative")
            continue
        corrupted = graph.word(unpaired[rng.integers(len(unpaired))])
        sequences.append(make_pair_sequence(graph, aspect, corrupted, vocab, frequencies, max_depth, max_length, max_len))
    return sequences


def make_contrastive_sets(
    graph: SemanticGraph,
    anchors: Iterable[str],
    vocab: Vocabulary,
    frequencies: FrequencyTable,
    rng: np.random.Generator,
    max_depth: int = 2,
    max_length: int = 5,
    n_negatives: int = 4,
) -> list[ContrastiveSet]:
    """Contrastive sets for anchor words that have synonyms and unrelated same-kind words.

    Positives are the sampled similar words without the anchor; negatives are drawn
    from same-kind nodes farther than ``max_depth`` similarity hops.
    """
    if n_negatives < 1:
        raise ValueError(f"n_negatives must be at least 1, got {n_negatives}")
    sets = []
    for anchor in anchors:
        if anchor not in graph:
            continue
        node = graph.node_id(anchor)
        sampled = sample_similar_nodes(graph, node, max_depth, max_length + 1, frequencies)
        positives = [word for member, word in zip(sampled.members, sampled.words) if member != node][:max_length]
        if not positives:
            continue
        near = reachable_within(graph, node, max_depth)
        pool = [other for other in graph.nodes(graph.kind(node)) if other not in near]
        if not pool:
            logger.warning(f"No negative candidates for {anchor!r}, skipping it")
            continue
        picked = rng.choice(len(pool), size=min(n_negatives, len(pool)), replace=False)
        negatives = [graph.word(pool[i]) for i in sorted(picked)]
        sets.append(
            ContrastiveSet(
                anchor=anchor,
                positives=tuple(positives),
                negatives=tuple(negatives),
                anchor_ids=tuple(vocab.encode(anchor)),
                positive_ids=tuple(_encode_words(vocab, positives)),
                negative_ids=tuple(tuple(vocab.encode(word)) for word in negatives),
            )
        )
    return sets


def _new_grads(encoder: Encoder, grads: ParamSet | None) -> ParamSet:
    return grads if grads is not None else encoder.params.zeros_like()


def loss_sw(
    encoder: Encoder, batch: Sequence[MaskedSequence], grads: ParamSet | None = None
) -> tuple[float, ParamSet]:
    """Summed cross-entropy of the original ids at masked positions."""
    grads = _new_grads(encoder, grads)
    w, total = encoder.params["mlm.w"], 0.0
    for sequence in batch:
        positions = np.flatnonzero(sequence.mask)
        if positions.size == 0:
            continue
        hidden, cache = encoder.forward(sequence.input_ids)
        h = hidden[positions]
        targets = np.asarray(sequence.targets)[positions]
        logits = encoder.token_logits(h)
        total -= float(log_softmax(logits, axis=-1)[np.arange(positions.size), targets].sum())

        d_logits = softmax(logits, axis=-1)
        d_logits[np.arange(positions.size), targets] -= 1.0
        grads["mlm.w"] += h.T @ d_logits
        grads["mlm.b"] += d_logits.sum(axis=0)
        d_hidden = np.zeros_like(hidden)
        d_hidden[positions] = d_logits @ w.T
        encoder.backward(cache, d_hidden, grads)
    return total, grads


def loss_ap(encoder: Encoder, batch: Sequence[PairSequence], grads: ParamSet | None = None) -> tuple[float, ParamSet]:
    """Summed binary cross-entropy of the pair classifier on the ``[CLS]`` state."""
    grads = _new_grads(encoder, grads)
    w, total = encoder.params["pair.w"], 0.0
    for sequence in batch:
        hidden, cache = encoder.forward(sequence.ids)
        z = float(hidden[0] @ w + encoder.params["pair.b"][0])
        total += float(np.logaddexp(0.0, z) - sequence.label * z)
        dz = float(expit(z)) - sequence.label
        grads["pair.w"] += dz * hidden[0]
        grads["pair.b"] += dz
        d_hidden = np.zeros_like(hidden)
        d_hidden[0] = dz * w
        encoder.backward(cache, d_hidden, grads)
    return total, grads


def info_nce(scores: np.ndarray) -> tuple[float, np.ndarray]:
    """``-log(e^{s_0} / sum_j e^{s_j})`` for scores whose first entry is the positive one.

    Returns the loss and its gradient with respect to the scores.
    """
    scores = np.asarray(scores, dtype=np.float64)
    d_scores = softmax(scores)
    d_scores[0] -= 1.0
    return float(logsumexp(scores) - scores[0]), d_scores


def loss_ns(
    encoder: Encoder, batch: Sequence[ContrastiveSet], grads: ParamSet | None = None
) -> tuple[float, ParamSet]:
    """Contrastive loss over cosine similarities of mean-pooled word representations, averaged over the batch."""
    grads = _new_grads(encoder, grads)
    if not batch:
        return 0.0, grads
    total, scale = 0.0, 1.0 / len(batch)
    for example in batch:
        anchor, anchor_cache = encoder.pooled(example.anchor_ids)
        others = [encoder.pooled(example.positive_ids)]
        others += [encoder.pooled(ids) for ids in example.negative_ids]
        scores, d_anchor, d_others = [], np.zeros_like(anchor), []
        for vector, _ in others:
            score, da, db = cosine(anchor, vector)
            scores.append(score)
            d_others.append((da, db))
        loss, d_scores = info_nce(np.array(scores))
        total += scale * loss
        for (vector, cache), (da, db), ds in zip(others, d_others, d_scores):
            d_anchor += scale * ds * da
            n = cache.token_ids.size
            encoder.backward(cache, np.tile(scale * ds * db / n, (n, 1)), grads)
        n = anchor_cache.token_ids.size
        encoder.backward(anchor_cache, np.tile(d_anchor / n, (n, 1)), grads)
    return total, grads


def joint_loss(
    encoder: Encoder,
    masked: Sequence[MaskedSequence] = (),
    pairs: Sequence[PairSequence] = (),
    contrastive: Sequence[ContrastiveSet] = (),
    objectives: Iterable[str] = OBJECTIVES,
) -> tuple[LossBreakdown, ParamSet]:
    """Unweighted sum of the selected objectives, with summed gradients.

    Empty batches and objectives left out of ``objectives`` contribute 0.
    """
    objectives = set(objectives)
    unknown = objectives - set(OBJECTIVES)
    if unknown:
        raise ValueError(f"Unknown objectives: {sorted(unknown)}")
    grads = encoder.params.zeros_like()
    breakdown = LossBreakdown()
    if "sw" in objectives:
        breakdown.sw, _ = loss_sw(encoder, masked, grads)
    if "ap" in objectives:
        breakdown.ap, _ = loss_ap(encoder, pairs, grads)
    if "ns" in objectives:
        breakdown.ns, _ = loss_ns(encoder, contrastive, grads)
    return breakdown, grads


def dump_examples(batch: PretrainBatch, path: Path | str) -> None:
    """Write the examples of a batch as JSON-lines, one record per example with its type."""
    with open(path, "w", encoding="utf-8") as f:
        for kind, examples in (("masked", batch.masked), ("pair", batch.pairs), ("contrastive", batch.contrastive)):
            for example in examples:
                f.write(json.dumps({"type": kind, **asdict(example)}, ensure_ascii=False) + "\n")
