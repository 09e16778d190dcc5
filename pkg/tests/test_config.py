"""Tests for configuration loading, overrides, validation and snapshots."""

import pytest
import yaml

from sentigraph.config import (
    SNAPSHOT_NAME,
    ConfigError,
    PipelineConfig,
    load_config,
    parse_overrides,
    read_config_file,
    validate,
    write_snapshot,
)


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text("d_model: 32\nn_heads: 4\nlr: 0.001\nseeds: [1, 2]\ntask: aspect\n", encoding="utf-8")
    return path


def test_defaults():
    """Test the pretraining defaults."""
    config = load_config()
    assert config == PipelineConfig()
    assert config.masking_rate == 0.2
    assert config.objectives == ("sw", "ap", "ns")
    assert config.seeds == (0, 1, 2, 3, 4)
    assert config.lr == 1e-5
    validate(config)


def test_file_then_overrides(config_file):
    """Test that overrides take precedence over the config file."""
    config = load_config(config_file, ["d_model=16", "fractions=0.5,1.0", "objectives=sw,ns"])
    assert config.d_model == 16
    assert config.n_heads == 4
    assert config.lr == pytest.approx(1e-3)
    assert config.seeds == (1, 2)
    assert config.task == "aspect"
    assert config.fractions == (0.5, 1.0)
    assert config.objectives == ("sw", "ns")


def test_scalar_coercion():
    """Test that ints become floats and single values become tuples."""
    config = load_config(overrides=["lr=1", "seeds=3", "corpus_path=reviews.txt", "synthetic=true"])
    assert config.lr == 1.0
    assert isinstance(config.lr, float)
    assert config.seeds == (3,)
    assert config.corpus_path == "reviews.txt"
    assert config.synthetic is True


@pytest.mark.parametrize(
    ("override", "message"),
    [
        ("d_modl=16", "Unknown override keys: d_modl"),
        ("d_model=big", "d_model must be of type int"),
        ("d_model=1.5", "d_model must be of type int"),
        ("freeze_encoder=1", "freeze_encoder must be of type bool"),
        ("seeds=a,b", "seeds must be of type int"),
    ],
)
def test_bad_overrides(override, message):
    """Test that unknown keys and badly typed values are rejected."""
    with pytest.raises(ConfigError, match=message):
        load_config(overrides=[override])


def test_parse_overrides():
    """Test key=value parsing of YAML scalars."""
    assert parse_overrides(["eps=0.25", "task=sentence", "overrides_path=", "a = b=c"]) == {
        "eps": 0.25,
        "task": "sentence",
        "overrides_path": None,
        "a": "b=c",
    }
    with pytest.raises(ConfigError, match="key=value"):
        parse_overrides(["d_model"])
    with pytest.raises(ConfigError, match="key=value"):
        parse_overrides(["=3"])
    with pytest.raises(ConfigError, match="Invalid YAML"):
        parse_overrides(["task=[sentence"])


def test_bad_config_files(tmp_path):
    """Test that unreadable, invalid and non-mapping files are rejected."""
    with pytest.raises(ConfigError, match="Cannot read"):
        read_config_file(tmp_path / "missing.yaml")

    path = tmp_path / "config.yaml"
    path.write_text("d_model: [16\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="Invalid YAML"):
        read_config_file(path)

    path.write_text("- d_model\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="mapping"):
        read_config_file(path)

    path.write_text("", encoding="utf-8")
    assert read_config_file(path) == {}

    path.write_text("d_modl: 16\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="Unknown config file"):
        load_config(path)


@pytest.mark.parametrize(
    ("override", "message"),
    [
        ("d_model=30", "divisible by n_heads"),
        ("masking_rate=0", "masking_rate"),
        ("eps=3", "eps"),
        ("batch_size=0", "batch_size must be at least 1"),
        ("task=ranking", "Unknown task 'ranking'"),
        ("experiment=sweep", "Unknown experiment"),
        ("objectives=sw,mlm", "objectives"),
        ("variants=full,everything", "variants"),
        ("fractions=0,1", "fractions"),
        ("pair_strategy=random", "pair_strategy"),
        ("lr=-1", "learning rates"),
        ("experiment_lr=0", "learning rates"),
    ],
)
def test_validate_ranges(override, message):
    """Test range and choice checks."""
    with pytest.raises(ConfigError, match=message):
        validate(load_config(overrides=[override]))


def test_validate_paths(data_dir, tmp_path):
    """Test that required paths must be set and exist."""
    with pytest.raises(ConfigError, match="corpus_path is required"):
        validate(PipelineConfig(), required_paths=["corpus_path"])

    config = load_config(overrides=[f"corpus_path={data_dir / 'reviews.txt'}", f"lexicon_path={tmp_path / 'none.tsv'}"])
    validate(config, required_paths=["corpus_path"])
    with pytest.raises(ConfigError, match="lexicon_path does not exist"):
        validate(config, required_paths=["corpus_path", "lexicon_path"])

    config = load_config(overrides=[f"checkpoint_path={tmp_path / 'encoder.ckpt'}"])
    with pytest.raises(ConfigError, match="checkpoint_path does not exist"):
        validate(config)


def test_snapshot(tmp_path):
    """Test that the snapshot is sorted YAML that loads back into the same configuration."""
    config = load_config(overrides=["d_model=16", "fractions=0.5,1.0"])
    path = write_snapshot(config, tmp_path)
    assert path.name == SNAPSHOT_NAME

    content = yaml.safe_load(path.read_text(encoding="utf-8"))
    assert list(content) == sorted(content)
    assert content["fractions"] == [0.5, 1.0]
    assert load_config(path) == config
