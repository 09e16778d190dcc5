"""Mining stage: corpus to tagged pairs, embeddings, synonym clusters and the semantic graph."""

import logging
from dataclasses import dataclass
from pathlib import Path

from .corpus import Corpus, FrequencyTable, build_frequency_table
from .graph import SemanticGraph, build_graph
from .objectives import PackedSequence, pack_sentences
from .similarity import EmbeddingTable, SynonymCluster, cluster_lexicon, save_clusters, train_embeddings
from .term_extraction import Lexicon, TaggedCorpus, tag_corpus

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MiningSettings:
    d_emb: int = 32
    window: int = 5
    embedding_epochs: int = 20
    negative: int = 5
    eps: float = 0.3
    min_pts: int = 2
    max_cluster_size: int = 30
    min_pair_count: int = 1
    pair_strategy: str = "optimal"
    seed: int = 0


@dataclass
class MinedArtifacts:
    corpus: Corpus
    lexicon: Lexicon
    tagged: TaggedCorpus
    table: EmbeddingTable
    clusters: list[SynonymCluster]
    graph: SemanticGraph
    frequencies: FrequencyTable

    def save(self, directory: Path | str) -> dict[str, Path]:
        """Write every artifact under ``directory`` and return the written paths."""
        directory = Path(directory)
        paths = {
            "vocab": directory / "vocab.tsv",
            "spans": directory / "spans.jsonl",
            "pairs": directory / "pairs.jsonl",
            "embeddings": directory / "embeddings.npy",
            "embedding_vocab": directory / "embeddings_vocab.tsv",
            "clusters": directory / "clusters.json",
            "graph": directory / "graph.json",
        }
        self.corpus.vocab.save(paths["vocab"])
        self.tagged.dump(paths["spans"], paths["pairs"])
        self.table.save(paths["embeddings"], paths["embedding_vocab"])
        save_clusters(self.clusters, paths["clusters"])
        self.graph.save(paths["graph"])
        return paths

    def sequences(self, max_len: int = 128) -> list[PackedSequence]:
        return packed_sequences(self.tagged, max_len)


def packed_sequences(tagged: TaggedCorpus, max_len: int = 128) -> list[PackedSequence]:
    """Pretraining sequences of a tagged corpus, with each sentence's pairs as (aspect, sentiment) words."""
    pairs = [[(pair.aspect.text, pair.sentiment.text) for pair in sentence_pairs] for sentence_pairs in tagged.pairs]
    return pack_sentences(tagged.sentences, tagged.spans, pairs, max_len)


def mine_corpus(
    corpus: Corpus,
    lexicon: Lexicon,
    settings: MiningSettings = MiningSettings(),
    override_file: Path | str | None = None,
) -> MinedArtifacts:
    """Run tagging, pair matching, embedding training, clustering and graph building."""
    tagged = tag_corpus(corpus, lexicon, strategy=settings.pair_strategy)
    table = train_embeddings(
        corpus,
        d_emb=settings.d_emb,
        window=settings.window,
        epochs=settings.embedding_epochs,
        seed=settings.seed,
        negative=settings.negative,
    )
    clusters = cluster_lexicon(
        table,
        lexicon,
        eps=settings.eps,
        min_pts=settings.min_pts,
        max_size=settings.max_cluster_size,
        override_file=override_file,
    )
    graph = build_graph(clusters, tagged.pair_counts(), settings.min_pair_count)
    return MinedArtifacts(corpus, lexicon, tagged, table, clusters, graph, build_frequency_table(corpus))
