"""Word embeddings and synonym clustering (DBSCAN with oversize-cluster recycling)."""

import json
import logging
import shlex
import zlib
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from gensim.models import Word2Vec
from gensim.models.callbacks import CallbackAny2Vec
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from sklearn.metrics.pairwise import cosine_distances, cosine_similarity

from .corpus import Corpus
from .term_extraction import Lexicon, TermKind

logger = logging.getLogger(__name__)

DEFAULT_EPS_GRID = (0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4)
DEFAULT_MIN_PTS_GRID = (2, 3, 5)
# cosine distances closer than this count as equal when a border point picks its core neighbour
TIE_TOLERANCE = 1e-12


class OverrideError(ValueError):
    """Raised when a cluster override directive cannot be applied."""

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class EmbeddingTable:
    """Dense word vectors with phrase lookup by averaging."""

    def __init__(self, words: Sequence[str], vectors: np.ndarray, loss_history: Sequence[float] = ()):
        if len(words) != len(vectors):
            raise ValueError(f"{len(words)} words but {len(vectors)} vectors")
        self.words = list(words)
        self.vectors = np.asarray(vectors, dtype=np.float64)
        self.loss_history = list(loss_history)
        self._index = {word: i for i, word in enumerate(self.words)}

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, term: str) -> bool:
        return self.vector(term) is not None

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def vector(self, term: str) -> np.ndarray | None:
        """Vector of a word, or the mean of its words' vectors for a phrase."""
        rows = [self._index[word] for word in term.lower().split() if word in self._index]
        if not rows:
            return None
        return self.vectors[rows].mean(axis=0)

    def matrix(self, terms: Sequence[str]) -> np.ndarray:
        return np.stack([self.vector(term) for term in terms]) if terms else np.zeros((0, self.dim))

    def save(self, matrix_path: Path | str, vocab_path: Path | str) -> None:
        """Write the matrix as `.npy` and its row vocabulary as TSV `word \\t row`."""
        np.save(matrix_path, self.vectors)
        Path(vocab_path).write_text("".join(f"{word}\t{i}\n" for i, word in enumerate(self.words)), encoding="utf-8")

    @classmethod
    def load(cls, matrix_path: Path | str, vocab_path: Path | str) -> "EmbeddingTable":
        words = [line.split("\t")[0] for line in Path(vocab_path).read_text(encoding="utf-8").splitlines() if line]
        return cls(words, np.load(matrix_path))


def _stable_hash(text: str) -> int:
    # str hash is salted per process; vector initialisation must not be
    return zlib.crc32(text.encode("utf-8"))


class _EpochLoss(CallbackAny2Vec):
    """Collects the training loss of every epoch (gensim reports a running total)."""

    def __init__(self):
        self.losses: list[float] = []
        self._previous = 0.0

    def on_epoch_end(self, model):
        total = model.get_latest_training_loss()
        self.losses.append(total - self._previous)
        self._previous = total


def train_embeddings(
    corpus: Corpus,
    d_emb: int = 32,
    window: int = 5,
    epochs: int = 20,
    seed: int = 0,
    negative: int = 5,
) -> EmbeddingTable:
    """Train skip-gram with negative sampling vectors for every corpus word.

    Parameters
    ----------
    corpus : Corpus
        Tokenized corpus; sentences are the training contexts.
    d_emb : int
        Vector dimension, at least 2.
    window : int
        Maximum context distance.
    epochs : int
        Passes over the corpus.
    seed : int
        Seed for initialisation and negative sampling. Training uses a single worker
        and a process-independent word hash so that the same seed gives the same table.
    negative : int
        Negative samples per positive context pair.

    Returns
    -------
    EmbeddingTable
        One vector per corpus word with the per-epoch loss history.

    Raises
    ------
    ValueError
        If ``d_emb < 2`` or the corpus has no tokens.
    """
    if d_emb < 2:
        raise ValueError(f"d_emb must be at least 2, got {d_emb}")
    sentences = [sentence.words for sentence in corpus.sentences() if len(sentence)]
    if not sentences:
        raise ValueError("Cannot train embeddings on an empty corpus")

    recorder = _EpochLoss()
    model = Word2Vec(
        vector_size=d_emb,
        window=window,
        min_count=1,
        sg=1,
        hs=0,
        negative=negative,
        sample=0,
        seed=seed,
        workers=1,
        hashfxn=_stable_hash,
    )
    model.build_vocab(corpus_iterable=sentences)
    model.train(
        corpus_iterable=sentences,
        total_examples=len(sentences),
        epochs=epochs,
        compute_loss=True,
        callbacks=[recorder],
    )
    words = sorted(model.wv.key_to_index)
    vectors = np.stack([model.wv[word] for word in words]).astype(np.float64)
    logger.info(f"Trained {len(words)} embeddings of dimension {d_emb} for {epochs} epochs")
    return EmbeddingTable(words, vectors, recorder.losses)


@dataclass(frozen=True)
class SynonymCluster:
    members: frozenset[str]
    kind: TermKind
    oversize: bool = False

    def __len__(self) -> int:
        return len(self.members)

    def to_dict(self) -> dict:
        record = {"kind": self.kind.value, "members": sorted(self.members)}
        if self.oversize:
            record["oversize"] = True
        return record

    @classmethod
    def from_dict(cls, record: dict) -> "SynonymCluster":
        return cls(frozenset(record["members"]), TermKind(record["kind"]), bool(record.get("oversize", False)))


def dbscan_labels(points: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """DBSCAN under cosine distance.

    A point is core when at least ``min_pts`` points (itself included) lie within
    ``eps``. Clusters are the connected components of the core points; a border
    point joins the cluster of its nearest core neighbour; among equally near core
    points the lexicographically smallest vector wins, so the partition does not
    depend on the input order.
    Cluster labels follow the smallest point index of each cluster, noise is -1.
    """
    if not 0 < eps <= 2:
        raise ValueError(f"eps must lie in (0, 2], got {eps}")
    if min_pts < 2:
        raise ValueError(f"min_pts must be at least 2, got {min_pts}")
    n = len(points)
    labels = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return labels

    distances = cosine_distances(points)
    neighbours = distances <= eps
    core = neighbours.sum(axis=1) >= min_pts
    core_idx = np.flatnonzero(core)
    if core_idx.size == 0:
        return labels

    _, components = connected_components(csr_matrix(neighbours[np.ix_(core_idx, core_idx)].astype(np.float64)), directed=False)
    labels[core_idx] = components
    for i in np.flatnonzero(~core):
        linked = core_idx[neighbours[i, core_idx]]
        if linked.size:
            near = distances[i, linked]
            tied = linked[near <= near.min() + TIE_TOLERANCE]
            labels[i] = labels[tied[np.lexsort(points[tied].T[::-1])[0]]]

    relabel: dict[int, int] = {}
    for i in range(n):
        if labels[i] >= 0 and labels[i] not in relabel:
            relabel[labels[i]] = len(relabel)
    return np.array([relabel.get(label, -1) for label in labels], dtype=np.int64)


def dbscan(
    table: EmbeddingTable, terms: Sequence[str], kind: TermKind, eps: float, min_pts: int
) -> tuple[list[SynonymCluster], set[str]]:
    """Cluster the vectors of same-kind terms.

    Returns
    -------
    tuple[list[SynonymCluster], set[str]]
        Clusters in label order and the set of noise terms.
    """
    terms = [term for term in terms if term in table]
    labels = dbscan_labels(table.matrix(terms), eps, min_pts)
    clusters = [
        SynonymCluster(frozenset(term for term, label in zip(terms, labels) if label == k), kind)
        for k in range(int(labels.max(initial=-1)) + 1)
    ]
    noise = {term for term, label in zip(terms, labels) if label < 0}
    return clusters, noise


def mean_intra_similarity(table: EmbeddingTable, clusters: Iterable[SynonymCluster]) -> float:
    """Mean cosine similarity over all within-cluster word pairs."""
    total, count = 0.0, 0
    for cluster in clusters:
        members = sorted(cluster.members)
        if len(members) < 2:
            continue
        sims = cosine_similarity(table.matrix(members))
        upper = np.triu_indices(len(members), k=1)
        total += float(sims[upper].sum())
        count += len(upper[0])
    return total / count if count else float("-inf")


def _recycle_one(
    cluster: SynonymCluster,
    table: EmbeddingTable,
    max_size: int,
    eps_grid: Sequence[float],
    min_pts_grid: Sequence[int],
) -> list[SynonymCluster]:
    members = sorted(cluster.members)
    best: tuple[float, list[SynonymCluster]] | None = None
    progress: tuple[int, float, list[SynonymCluster]] | None = None
    for eps in eps_grid:
        for min_pts in min_pts_grid:
            parts, _ = dbscan(table, members, cluster.kind, eps, min_pts)
            if not parts:
                continue
            largest = max(len(part) for part in parts)
            score = mean_intra_similarity(table, parts)
            if largest <= max_size:
                if best is None or score > best[0]:
                    best = (score, parts)
            elif largest < len(cluster) and (progress is None or (largest, -score) < (progress[0], -progress[1])):
                progress = (largest, score, parts)
    if best is not None:
        return best[1]
    if progress is not None:
        # no single setting fits; split as far as possible and recurse on what is still too big
        return [
            piece
            for part in progress[2]
            for piece in (
                _recycle_one(part, table, max_size, eps_grid, min_pts_grid) if len(part) > max_size else [part]
            )
        ]
    logger.warning(f"Keeping irreducible {cluster.kind.value} cluster of {len(cluster)} members")
    return [SynonymCluster(cluster.members, cluster.kind, oversize=True)]


def recycle_clusters(
    clusters: Sequence[SynonymCluster],
    table: EmbeddingTable,
    max_size: int = 30,
    eps_grid: Sequence[float] = DEFAULT_EPS_GRID,
    min_pts_grid: Sequence[int] = DEFAULT_MIN_PTS_GRID,
) -> list[SynonymCluster]:
    """Re-cluster clusters larger than ``max_size`` by grid search.

    For an oversize cluster every (eps, min_pts) in the grids is tried on its
    members; among settings whose sub-clusters all fit, the one with the highest
    mean intra-cluster cosine similarity wins (first in grid order on ties). When
    no setting fits, the setting that shrinks the largest sub-cluster most is
    applied and recycling recurses on the pieces. A cluster no setting can split
    is kept and flagged ``oversize``. Sub-cluster noise words are dropped.
    """
    if not eps_grid or not min_pts_grid:
        raise ValueError("Recycling grids must not be empty")
    result = []
    for cluster in clusters:
        if len(cluster) <= max_size:
            result.append(cluster)
        else:
            pieces = _recycle_one(cluster, table, max_size, eps_grid, min_pts_grid)
            logger.info(f"Recycled {cluster.kind.value} cluster of {len(cluster)} into sizes {[len(p) for p in pieces]}")
            result.extend(pieces)
    return result


def validate_clusters(clusters: Sequence[SynonymCluster]) -> None:
    """Check the size and same-kind disjointness invariants."""
    seen: dict[tuple[TermKind, str], int] = {}
    for i, cluster in enumerate(clusters):
        if len(cluster) < 2:
            raise ValueError(f"cluster_{i} has fewer than two members")
        for word in cluster.members:
            if (cluster.kind, word) in seen:
                raise ValueError(f"{word!r} appears in cluster_{seen[cluster.kind, word]} and cluster_{i}")
            seen[cluster.kind, word] = i


def apply_overrides(
    clusters: Sequence[SynonymCluster], override_file: Path | str, known_words: Iterable[str]
) -> list[SynonymCluster]:
    """Apply manual ``add``/``remove``/``merge`` directives in file order.

    Directives reference clusters by their position as ``cluster_<index>``::

        add cluster_0 "superb"
        remove cluster_3 "cheap"
        merge cluster_1 cluster_2

    Blank lines and ``#`` comments are ignored. Clusters left with fewer than two
    members are dropped.

    Raises
    ------
    OverrideError
        For unknown directives, clusters or words, or kind conflicts; carries the line number.
    """
    known = set(known_words)
    state: dict[int, tuple[set[str], TermKind, bool]] = {
        i: (set(cluster.members), cluster.kind, cluster.oversize) for i, cluster in enumerate(clusters)
    }

    def cluster_ref(token: str, line_number: int) -> int:
        if not token.startswith("cluster_") or not token[len("cluster_") :].isdigit():
            raise OverrideError(f"expected a cluster reference like cluster_3, got {token!r}", line_number)
        index = int(token[len("cluster_") :])
        if index not in state:
            raise OverrideError(f"unknown cluster {token}", line_number)
        return index

    for line_number, line in enumerate(Path(override_file).read_text(encoding="utf-8").splitlines(), start=1):
        try:
            parts = shlex.split(line, comments=True)
        except ValueError as e:
            raise OverrideError(f"cannot parse directive: {e}", line_number) from e
        if not parts:
            continue
        directive, args = parts[0], parts[1:]
        if directive in ("add", "remove") and len(args) == 2:
            index = cluster_ref(args[0], line_number)
            word = args[1].lower()
            members, kind, _ = state[index]
            if directive == "add":
                if word not in known:
                    raise OverrideError(f"unknown word {word!r}", line_number)
                for other, (other_members, other_kind, _) in state.items():
                    if other != index and other_kind is kind and word in other_members:
                        raise OverrideError(f"{word!r} already belongs to cluster_{other}", line_number)
                members.add(word)
            else:
                if word not in members:
                    raise OverrideError(f"unknown word {word!r} for cluster_{index}", line_number)
                members.discard(word)
        elif directive == "merge" and len(args) == 2:
            target, source = cluster_ref(args[0], line_number), cluster_ref(args[1], line_number)
            if target == source:
                raise OverrideError("cannot merge a cluster with itself", line_number)
            if state[target][1] is not state[source][1]:
                raise OverrideError("cannot merge clusters of different kinds", line_number)
            state[target][0].update(state.pop(source)[0])
        else:
            raise OverrideError(f"invalid directive {line.strip()!r}", line_number)

    result = []
    for index in sorted(state):
        members, kind, oversize = state[index]
        if len(members) < 2:
            logger.warning(f"Dropping cluster_{index}: fewer than two members after overrides")
            continue
        result.append(SynonymCluster(frozenset(members), kind, oversize))
    validate_clusters(result)
    return result


def cluster_lexicon(
    table: EmbeddingTable,
    lexicon: Lexicon,
    eps: float = 0.3,
    min_pts: int = 2,
    max_size: int = 30,
    eps_grid: Sequence[float] = DEFAULT_EPS_GRID,
    min_pts_grid: Sequence[int] = DEFAULT_MIN_PTS_GRID,
    override_file: Path | str | None = None,
) -> list[SynonymCluster]:
    """Cluster the aspect terms and the sentiment terms separately, recycle, then apply overrides."""
    clusters: list[SynonymCluster] = []
    for kind in TermKind:
        found, noise = dbscan(table, lexicon.terms(kind), kind, eps, min_pts)
        logger.info(f"DBSCAN found {len(found)} {kind.value} clusters, {len(noise)} noise terms")
        clusters.extend(recycle_clusters(found, table, max_size, eps_grid, min_pts_grid))
    if override_file is not None:
        clusters = apply_overrides(clusters, override_file, lexicon.aspects | lexicon.sentiments)
    return clusters


def save_clusters(clusters: Sequence[SynonymCluster], path: Path | str) -> None:
    records = [{"id": f"cluster_{i}", **cluster.to_dict()} for i, cluster in enumerate(clusters)]
    Path(path).write_text(json.dumps(records, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def load_clusters(path: Path | str) -> list[SynonymCluster]:
    return [SynonymCluster.from_dict(record) for record in json.loads(Path(path).read_text(encoding="utf-8"))]
