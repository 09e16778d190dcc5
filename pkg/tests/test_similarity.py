"""Tests for embeddings, DBSCAN clustering, recycling and overrides."""

import numpy as np
import pytest

from sentigraph.corpus import Corpus
from sentigraph.similarity import (
    EmbeddingTable,
    OverrideError,
    SynonymCluster,
    apply_overrides,
    cluster_lexicon,
    dbscan_labels,
    load_clusters,
    recycle_clusters,
    save_clusters,
    train_embeddings,
    validate_clusters,
)
from sentigraph.term_extraction import TermKind

GROUPS = {
    0: ("color", "colour"),
    1: ("fabric", "material"),
    2: ("price",),
    3: ("excellent", "good", "great", "nice"),
    4: ("bad", "poor", "terrible"),
}


@pytest.fixture
def grouped_table():
    """Embedding table whose lexicon words point along one axis per synonym group."""
    words, vectors = [], []
    for axis, group in GROUPS.items():
        for k, word in enumerate(group):
            vector = np.full(5, 0.01 * (k + 1))
            vector[axis] = 1.0
            words.append(word)
            vectors.append(vector)
    return EmbeddingTable(words, np.array(vectors))


@pytest.fixture
def sentiment_clusters():
    return [
        SynonymCluster(frozenset({"great", "good"}), TermKind.SENTIMENT),
        SynonymCluster(frozenset({"bad", "poor"}), TermKind.SENTIMENT),
        SynonymCluster(frozenset({"color", "colour"}), TermKind.ASPECT),
    ]


def _reference_dbscan(points: np.ndarray, eps: float, min_pts: int) -> list[int]:
    unit = points / np.linalg.norm(points, axis=1, keepdims=True)
    distances = 1.0 - unit @ unit.T
    np.fill_diagonal(distances, 0.0)
    n = len(points)
    neighbours = [[j for j in range(n) if distances[i, j] <= eps] for i in range(n)]
    core = [len(neighbours[i]) >= min_pts for i in range(n)]
    labels = [-1] * n
    next_label = 0
    for i in range(n):
        if not core[i] or labels[i] >= 0:
            continue
        labels[i] = next_label
        stack = [i]
        while stack:
            current = stack.pop()
            for j in neighbours[current]:
                if core[j] and labels[j] < 0:
                    labels[j] = next_label
                    stack.append(j)
        next_label += 1
    for i in range(n):
        if not core[i]:
            cores = [j for j in neighbours[i] if core[j]]
            if cores:
                labels[i] = labels[min(cores, key=lambda j: (distances[i, j], tuple(points[j])))]
    order: dict[int, int] = {}
    for label in labels:
        if label >= 0 and label not in order:
            order[label] = len(order)
    return [order.get(label, -1) for label in labels]


def test_phrase_vector_is_mean():
    """Test that a phrase is looked up as the mean of its words."""
    table = EmbeddingTable(["battery", "life"], np.array([[1.0, 0.0], [0.0, 2.0]]))
    np.testing.assert_allclose(table.vector("Battery life"), [0.5, 1.0])
    assert "battery life" in table
    assert table.vector("screen") is None


def test_dbscan_two_groups_and_noise():
    """Test DBSCAN on two tight directions and one outlier."""
    points = np.array([[1.0, 0.0], [0.99, 0.1], [0.0, 1.0], [0.1, 0.99], [-1.0, -1.0]])
    assert dbscan_labels(points, eps=0.05, min_pts=2).tolist() == [0, 0, 1, 1, -1]


def test_dbscan_parameter_checks():
    """Test that eps and min_pts are range-checked."""
    points = np.eye(3)
    with pytest.raises(ValueError, match="eps"):
        dbscan_labels(points, eps=0.0, min_pts=2)
    with pytest.raises(ValueError, match="min_pts"):
        dbscan_labels(points, eps=0.5, min_pts=1)


def test_dbscan_against_reference():
    """Test DBSCAN against a direct implementation on random instances."""
    rng = np.random.default_rng(7)
    for _ in range(50):
        points = rng.normal(size=(30, 3))
        eps = float(rng.uniform(0.05, 0.5))
        min_pts = int(rng.integers(2, 6))
        assert dbscan_labels(points, eps, min_pts).tolist() == _reference_dbscan(points, eps, min_pts)


def _partition(labels) -> set[frozenset[int]]:
    return {frozenset(np.flatnonzero(labels == label).tolist()) for label in set(labels.tolist())}


def test_dbscan_partition_ignores_point_order():
    """Test that a border point equally near two clusters lands in the same one whatever the order."""
    angles = [0.0, 0.3, 0.31, 0.32, 0.33, -0.3, -0.31, -0.32, -0.33]
    points = np.array([[np.cos(a), np.sin(a)] for a in angles])
    labels = dbscan_labels(points, eps=0.045, min_pts=4)
    assert len(set(labels.tolist())) == 2
    assert labels[0] >= 0

    rng = np.random.default_rng(3)
    for order in [np.array([0, 5, 6, 7, 8, 1, 2, 3, 4]), *(rng.permutation(len(points)) for _ in range(10))]:
        shuffled = dbscan_labels(points[order], eps=0.045, min_pts=4)
        restored = np.empty_like(shuffled)
        restored[order] = shuffled
        assert _partition(restored) == _partition(labels)


def test_recycle_splits_oversize_cluster():
    """Test that an oversize cluster of two directions is split in two."""
    words = list("abcdef")
    vectors = np.array([[1.0, 0.0, 0.01 * k] for k in range(3)] + [[0.0, 1.0, 0.01 * k] for k in range(3)])
    table = EmbeddingTable(words, vectors)
    oversize = SynonymCluster(frozenset(words), TermKind.ASPECT)
    recycled = recycle_clusters([oversize], table, max_size=3)
    assert {cluster.members for cluster in recycled} == {frozenset("abc"), frozenset("def")}
    assert not any(cluster.oversize for cluster in recycled)


def test_recycle_keeps_irreducible_cluster():
    """Test that a cluster no setting can split is kept and flagged."""
    words = list("abcd")
    table = EmbeddingTable(words, np.tile([1.0, 2.0, 3.0], (4, 1)))
    recycled = recycle_clusters([SynonymCluster(frozenset(words), TermKind.ASPECT)], table, max_size=3)
    assert len(recycled) == 1
    assert recycled[0].oversize
    assert recycled[0].members == frozenset(words)


def test_recycle_leaves_small_clusters(sentiment_clusters, grouped_table):
    """Test that clusters within the size bound pass through unchanged."""
    assert recycle_clusters(sentiment_clusters, grouped_table, max_size=30) == sentiment_clusters


def test_cluster_lexicon(grouped_table, lexicon):
    """Test per-kind clustering of the example lexicon."""
    clusters = cluster_lexicon(grouped_table, lexicon, eps=0.3, min_pts=2)
    assert [(cluster.kind, cluster.members) for cluster in clusters] == [
        (TermKind.ASPECT, frozenset({"color", "colour"})),
        (TermKind.ASPECT, frozenset({"fabric", "material"})),
        (TermKind.SENTIMENT, frozenset({"bad", "poor", "terrible"})),
        (TermKind.SENTIMENT, frozenset({"excellent", "good", "great", "nice"})),
    ]
    validate_clusters(clusters)


def test_cluster_lexicon_with_overrides(grouped_table, lexicon, tmp_path):
    """Test that override directives are applied after clustering."""
    path = tmp_path / "overrides.txt"
    path.write_text('remove cluster_3 "nice"\n', encoding="utf-8")
    clusters = cluster_lexicon(grouped_table, lexicon, eps=0.3, min_pts=2, override_file=path)
    assert clusters[3].members == frozenset({"excellent", "good", "great"})


def test_apply_overrides(sentiment_clusters, tmp_path):
    """Test add, remove and the dropping of clusters left with one member."""
    path = tmp_path / "overrides.txt"
    path.write_text('# fixes\nadd cluster_0 "Excellent"\n\nremove cluster_1 "poor"\n', encoding="utf-8")
    clusters = apply_overrides(sentiment_clusters, path, {"great", "good", "excellent", "bad", "poor"})
    assert [cluster.members for cluster in clusters] == [
        frozenset({"great", "good", "excellent"}),
        frozenset({"color", "colour"}),
    ]


def test_apply_overrides_merge(sentiment_clusters, tmp_path):
    """Test merging two same-kind clusters."""
    path = tmp_path / "overrides.txt"
    path.write_text("merge cluster_0 cluster_1\n", encoding="utf-8")
    clusters = apply_overrides(sentiment_clusters, path, set())
    assert clusters[0].members == frozenset({"great", "good", "bad", "poor"})
    assert len(clusters) == 2


@pytest.mark.parametrize(
    ("directive", "message"),
    [
        ("merge cluster_0 cluster_2", "different kinds"),
        ('add cluster_0 "superb"', "unknown word"),
        ('add cluster_0 "bad"', "already belongs to cluster_1"),
        ('remove cluster_0 "bad"', "unknown word"),
        ('add cluster_9 "good"', "unknown cluster"),
        ('add group_0 "good"', "cluster reference"),
        ("rename cluster_0", "invalid directive"),
        ('add cluster_0 "unterminated', "cannot parse"),
    ],
)
def test_apply_overrides_errors(sentiment_clusters, tmp_path, directive, message):
    """Test that bad directives raise with their line number."""
    path = tmp_path / "overrides.txt"
    path.write_text(f"# first line is a comment\n{directive}\n", encoding="utf-8")
    with pytest.raises(OverrideError, match=message) as excinfo:
        apply_overrides(sentiment_clusters, path, {"great", "good", "bad", "poor"})
    assert excinfo.value.line_number == 2


def test_validate_clusters_rejects_shared_word():
    """Test that a word may belong to one cluster per kind only."""
    clusters = [
        SynonymCluster(frozenset({"great", "good"}), TermKind.SENTIMENT),
        SynonymCluster(frozenset({"good", "fine"}), TermKind.SENTIMENT),
    ]
    with pytest.raises(ValueError, match="appears in cluster_0 and cluster_1"):
        validate_clusters(clusters)


def test_save_and_load_clusters(tmp_path):
    """Test that the oversize flag survives a save."""
    clusters = [SynonymCluster(frozenset({"a", "b", "c"}), TermKind.ASPECT, oversize=True)]
    save_clusters(clusters, tmp_path / "clusters.json")
    assert load_clusters(tmp_path / "clusters.json") == clusters


def test_train_embeddings(example_corpus):
    """Test vector shapes, loss history and determinism for a fixed seed."""
    first = train_embeddings(example_corpus, d_emb=8, epochs=3, seed=1)
    second = train_embeddings(example_corpus, d_emb=8, epochs=3, seed=1)
    assert first.vectors.shape == (len(first.words), 8)
    assert "great" in first.words
    assert len(first.loss_history) == 3
    np.testing.assert_array_equal(first.vectors, second.vectors)


def test_train_embeddings_rejects_bad_input(example_corpus):
    """Test the dimension and empty-corpus checks."""
    with pytest.raises(ValueError, match="d_emb"):
        train_embeddings(example_corpus, d_emb=1)
    with pytest.raises(ValueError, match="empty corpus"):
        train_embeddings(Corpus.from_lines([]))


def _shared_context_corpus(copies: int = 30) -> Corpus:
    lines = []
    for _ in range(copies):
        for word in ("good", "great"):
            lines += [f"the {word} color", f"a {word} fabric", f"really {word} price", f"so {word} material"]
        lines += ["zip bad zap", "zop bad zup"]
    return Corpus.from_lines(lines)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def test_train_embeddings_shared_contexts():
    """Test that words used in identical contexts end up closer than a word used elsewhere."""
    table = train_embeddings(_shared_context_corpus(), d_emb=16, window=2, epochs=20, seed=0)
    good = table.vector("good")
    assert _cosine(good, table.vector("great")) > _cosine(good, table.vector("bad"))


def test_train_embeddings_single_repeated_word():
    """Test that a corpus of one repeated word still gives finite vectors."""
    table = train_embeddings(Corpus.from_lines(["good good good good good"]), d_emb=4, epochs=5)
    assert table.words == ["good"]
    assert np.isfinite(table.vectors).all()


def test_train_embeddings_loss_decreases():
    """Test that the loss averaged over blocks of five epochs never rises and the vectors are finite."""
    table = train_embeddings(_shared_context_corpus(), d_emb=16, window=2, epochs=15, seed=0)
    assert len(table.loss_history) == 15
    windows = np.asarray(table.loss_history).reshape(3, 5).mean(axis=1)
    assert (np.diff(windows) <= 0).all(), windows
    norms = np.linalg.norm(table.vectors, axis=1)
    assert np.isfinite(norms).all()
    assert (norms > 0).all()
