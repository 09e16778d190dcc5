"""Heterogeneous aspect/sentiment semantic graph and similar-node sampling."""

import json
import logging
from collections import Counter
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import networkx as nx
from nltk.stem import PorterStemmer

from .corpus import FrequencyTable
from .similarity import SynonymCluster
from .term_extraction import TermKind

logger = logging.getLogger(__name__)

_stemmer = PorterStemmer()


class EdgeKind(str, Enum):
    SIMILARITY = "similarity"
    PAIR = "pair"


class SamplingMode(str, Enum):
    """How the BFS layers of similar-node sampling are combined."""

    UNION = "union"
    AS_WRITTEN = "as_written"


def literal_stem(term: str) -> str:
    """Lowercased Porter stem of every word of a term."""
    return " ".join(_stemmer.stem(word) for word in term.lower().split())


@dataclass(frozen=True)
class SampledNeighborhood:
    center: int
    members: tuple[int, ...]
    words: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.members)


class SemanticGraph:
    """Aspect and sentiment word nodes joined by similarity and pair edges.

    Similarity edges only join nodes of the same kind and pair edges only join an
    aspect with a sentiment. Node ids follow the sorted (kind, word) order.
    """

    def __init__(self, graph: nx.Graph | None = None):
        self.graph = graph if graph is not None else nx.Graph()
        self._ids = {data["word"]: node for node, data in self.graph.nodes(data=True)}
        self.similarity_view = nx.subgraph_view(
            self.graph, filter_edge=lambda u, v: self.graph.edges[u, v]["kind"] is EdgeKind.SIMILARITY
        )

    def __len__(self) -> int:
        return self.graph.number_of_nodes()

    def __contains__(self, word: str) -> bool:
        return word in self._ids

    def node_id(self, word: str) -> int:
        try:
            return self._ids[word]
        except KeyError as e:
            raise ValueError(f"Word {word!r} is not a graph node") from e

    def word(self, node: int) -> str:
        return self.graph.nodes[node]["word"]

    def kind(self, node: int) -> TermKind:
        return self.graph.nodes[node]["kind"]

    def nodes(self, kind: TermKind | None = None) -> list[int]:
        return sorted(node for node, data in self.graph.nodes(data=True) if kind is None or data["kind"] is kind)

    def edges(self, kind: EdgeKind | None = None) -> list[tuple[int, int]]:
        return sorted(
            (min(u, v), max(u, v)) for u, v, data in self.graph.edges(data=True) if kind is None or data["kind"] is kind
        )

    def similar_neighbors(self, node: int) -> list[int]:
        return sorted(self.similarity_view.neighbors(node))

    def pair_neighbors(self, node: int) -> list[int]:
        return sorted(v for v in self.graph.neighbors(node) if self.graph.edges[node, v]["kind"] is EdgeKind.PAIR)

    def has_pair(self, aspect: int, sentiment: int) -> bool:
        return self.graph.has_edge(aspect, sentiment) and self.graph.edges[aspect, sentiment]["kind"] is EdgeKind.PAIR

    def stats(self) -> dict[str, int]:
        """Node and edge counts by kind."""
        counts = Counter(f"{data['kind'].value}_nodes" for _, data in self.graph.nodes(data=True))
        counts.update(f"{data['kind'].value}_edges" for _, _, data in self.graph.edges(data=True))
        return {key: counts.get(key, 0) for key in ("aspect_nodes", "sentiment_nodes", "similarity_edges", "pair_edges")}

    def check_edge_kinds(self) -> None:
        """Raise if an edge breaks the kind discipline."""
        for u, v, data in self.graph.edges(data=True):
            if u == v:
                raise ValueError(f"Self-loop on node {u}")
            same = self.kind(u) is self.kind(v)
            if (data["kind"] is EdgeKind.SIMILARITY) != same:
                raise ValueError(f"{data['kind'].value} edge ({self.word(u)}, {self.word(v)}) joins wrong node kinds")

    def to_dict(self) -> dict:
        return {
            "nodes": [{"id": node, "word": self.word(node), "kind": self.kind(node).value} for node in self.nodes()],
            "edges": [{"u": u, "v": v, "kind": self.graph.edges[u, v]["kind"].value} for u, v in self.edges()],
        }

    @classmethod
    def from_dict(cls, record: Mapping) -> "SemanticGraph":
        graph = nx.Graph()
        for node in record["nodes"]:
            graph.add_node(int(node["id"]), word=node["word"], kind=TermKind(node["kind"]))
        for edge in record["edges"]:
            graph.add_edge(int(edge["u"]), int(edge["v"]), kind=EdgeKind(edge["kind"]))
        return cls(graph)

    def save(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, ensure_ascii=False) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path | str) -> "SemanticGraph":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (KeyError, json.JSONDecodeError) as e:
            raise ValueError(f"Invalid graph file {path}: {e}") from e


def build_graph(
    clusters: Sequence[SynonymCluster],
    pair_counts: Mapping[tuple[str, str], int],
    min_pair_count: int = 1,
) -> SemanticGraph:
    """Build the semantic graph.

    Parameters
    ----------
    clusters : Sequence[SynonymCluster]
        Synonym clusters; every within-cluster word pair becomes a similarity edge.
    pair_counts : Mapping[tuple[str, str], int]
        Occurrences of extracted (aspect, sentiment) pairs.
    min_pair_count : int
        Pairs seen fewer times get no pair edge.

    Returns
    -------
    SemanticGraph
        Graph whose nodes are all clustered words and all kept pair endpoints; same-kind
        nodes with an identical literal stem are also joined by a similarity edge.
    """
    kinds: dict[str, TermKind] = {}
    for cluster in clusters:
        for word in cluster.members:
            kinds[word] = cluster.kind
    kept_pairs = sorted(pair for pair, count in pair_counts.items() if count >= min_pair_count)
    for aspect, sentiment in kept_pairs:
        kinds.setdefault(aspect, TermKind.ASPECT)
        kinds.setdefault(sentiment, TermKind.SENTIMENT)

    graph = nx.Graph()
    order = sorted(kinds, key=lambda word: (kinds[word].value, word))
    ids = {word: i for i, word in enumerate(order)}
    for word in order:
        graph.add_node(ids[word], word=word, kind=kinds[word])

    for cluster in clusters:
        members = sorted(cluster.members)
        for i, u in enumerate(members):
            for v in members[i + 1 :]:
                graph.add_edge(ids[u], ids[v], kind=EdgeKind.SIMILARITY)

    by_stem: dict[tuple[TermKind, str], list[str]] = {}
    for word in order:
        by_stem.setdefault((kinds[word], literal_stem(word)), []).append(word)
    for words in by_stem.values():
        for i, u in enumerate(words):
            for v in words[i + 1 :]:
                graph.add_edge(ids[u], ids[v], kind=EdgeKind.SIMILARITY)

    for aspect, sentiment in kept_pairs:
        if kinds[aspect] is not TermKind.ASPECT or kinds[sentiment] is not TermKind.SENTIMENT:
            logger.warning(f"Skipping pair ({aspect}, {sentiment}) with mismatched node kinds")
            continue
        graph.add_edge(ids[aspect], ids[sentiment], kind=EdgeKind.PAIR)

    semantic_graph = SemanticGraph(graph)
    semantic_graph.check_edge_kinds()
    logger.info(f"Built semantic graph: {semantic_graph.stats()}")
    return semantic_graph


def _layers(graph: SemanticGraph, h: int, depth: int) -> list[set[int]]:
    layers = [{h}]
    for _ in range(depth):
        layers.append({t for s in layers[-1] for t in graph.similar_neighbors(s)})
    return layers


def sample_similar_nodes(
    graph: SemanticGraph,
    h: int,
    max_depth: int,
    max_length: int,
    frequencies: FrequencyTable,
    mode: SamplingMode | str = SamplingMode.UNION,
) -> SampledNeighborhood:
    """Sample the similar nodes of ``h``.

    Layer ``S_0`` is ``{h}`` and ``S_k`` holds every similarity neighbour of the
    nodes in ``S_{k-1}``. In ``union`` mode the candidates are the union of the
    layers (all nodes within ``max_depth`` similarity hops, ``h`` included); in
    ``as_written`` mode they are the intersection of the layers. Candidates are
    sorted by ascending corpus frequency, ties by node id, and the first
    ``max_length`` are returned.

    Raises
    ------
    ValueError
        If ``h`` is not a node or the depth/length bounds are below 1.
    """
    mode = SamplingMode(mode)
    if h not in graph.graph:
        raise ValueError(f"Node {h} is not in the graph")
    if max_depth < 1 or max_length < 1:
        raise ValueError(f"max_depth and max_length must be at least 1, got {max_depth} and {max_length}")

    layers = _layers(graph, h, max_depth)
    candidates = set.union(*layers) if mode is SamplingMode.UNION else set.intersection(*layers)
    ranked = sorted(candidates, key=lambda node: (frequencies.frequency(graph.word(node)), node))[:max_length]
    return SampledNeighborhood(h, tuple(ranked), tuple(graph.word(node) for node in ranked))


def similar_words(
    graph: SemanticGraph, word: str, max_depth: int, max_length: int, frequencies: FrequencyTable
) -> list[str]:
    """Union-mode sampled words of a term, falling back to the term alone."""
    if word not in graph:
        return [word]
    sampled = sample_similar_nodes(graph, graph.node_id(word), max_depth, max_length, frequencies)
    return list(sampled.words) or [word]


def reachable_within(graph: SemanticGraph, h: int, max_depth: int) -> set[int]:
    """Nodes within ``max_depth`` similarity hops of ``h`` (``h`` included)."""
    return set(nx.single_source_shortest_path_length(graph.similarity_view, h, cutoff=max_depth))
