from pathlib import Path

import pytest

from sentigraph.corpus import FrequencyTable, ingest
from sentigraph.graph import build_graph
from sentigraph.model import Encoder, EncoderConfig
from sentigraph.similarity import SynonymCluster
from sentigraph.term_extraction import Lexicon, TermKind


@pytest.fixture
def data_dir():
    """Get the test data directory path."""
    return Path(__file__).parent / "data"


@pytest.fixture
def example_corpus(data_dir):
    """Ingest the five example reviews."""
    return ingest(data_dir / "reviews.txt")


@pytest.fixture
def lexicon(data_dir):
    """Load the example aspect/sentiment lexicon."""
    return Lexicon.load(data_dir / "lexicon.tsv")


@pytest.fixture
def example_graph():
    """Graph with nodes color, good, great; great~good are synonyms and (color, great) is a pair."""
    clusters = [SynonymCluster(frozenset({"great", "good"}), TermKind.SENTIMENT)]
    return build_graph(clusters, {("color", "great"): 1})


@pytest.fixture
def example_frequencies():
    return FrequencyTable({"color": 3, "great": 1, "good": 4})


@pytest.fixture
def tiny_config():
    """Encoder small enough for finite-difference gradient checks."""
    return EncoderConfig(vocab_size=12, d_model=8, n_layers=2, n_heads=2, max_len=16, init_std=0.1)


@pytest.fixture
def tiny_encoder(tiny_config):
    return Encoder(tiny_config)
