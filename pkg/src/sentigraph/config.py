"""Pipeline configuration: YAML key/value files, ``key=value`` overrides, validation and snapshots."""

import dataclasses
import logging
import types
import typing
from collections.abc import Iterable
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml

from .downstream import Task
from .evalkit import VARIANTS
from .objectives import OBJECTIVES

logger = logging.getLogger(__name__)

SNAPSHOT_NAME = "run_config.txt"
EXPERIMENTS = ("ablation", "data-scale")


class ConfigError(ValueError):
    """Raised for unknown keys, badly typed or out-of-range values and missing input paths."""


@dataclass
class PipelineConfig:
    """Every setting of the pipeline, with the pretraining defaults of the method."""

    # paths
    corpus_path: str | None = None
    lexicon_path: str | None = None
    overrides_path: str | None = None
    graph_path: str | None = None
    checkpoint_path: str | None = None
    task_data: str | None = None
    predictions_path: str | None = None
    output_dir: str = "sentigraph_output"
    seed: int = 0

    # mining
    d_emb: int = 32
    window: int = 5
    embedding_epochs: int = 20
    negative: int = 5
    eps: float = 0.3
    min_pts: int = 2
    max_cluster_size: int = 30
    min_pair_count: int = 1
    pair_strategy: str = "optimal"

    # encoder
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    max_len: int = 128

    # pretraining
    objectives: tuple[str, ...] = OBJECTIVES
    masking_rate: float = 0.2
    n_pairs_max: int = 2
    max_depth: int = 2
    max_length: int = 5
    n_negatives: int = 4
    batch_size: int = 32
    lr: float = 1e-5
    warmup_ratio: float = 0.1
    weight_decay: float = 0.0
    pretrain_steps: int = 200
    checkpoint_every: int = 50

    # fine-tuning
    task: str = Task.SENTENCE.value
    finetune_epochs: int = 10
    finetune_lr: float = 1e-5
    finetune_batch_size: int = 32
    freeze_encoder: bool = False

    # experiments
    experiment: str = "ablation"
    experiment_lr: float = 1e-3
    variants: tuple[str, ...] = tuple(VARIANTS)
    fractions: tuple[float, ...] = (1.0,)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    synthetic: bool = False
    synthetic_size: int = 2000
    imbalance: float = 10.0

    def to_dict(self) -> dict[str, Any]:
        return {key: list(value) if isinstance(value, tuple) else value for key, value in dataclasses.asdict(self).items()}

    def with_updates(self, updates: dict[str, Any], source: str = "configuration") -> "PipelineConfig":
        hints = typing.get_type_hints(PipelineConfig)
        unknown = sorted(set(updates) - set(hints))
        if unknown:
            raise ConfigError(f"Unknown {source} keys: {', '.join(unknown)}")
        coerced = {key: _coerce(key, value, hints[key]) for key, value in updates.items()}
        return dataclasses.replace(self, **coerced)


def _coerce_scalar(key: str, value: Any, kind: type) -> Any:
    if kind is bool:
        if isinstance(value, bool):
            return value
    elif kind is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif kind is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif kind is str:
        if isinstance(value, (str, int, float)) and not isinstance(value, bool):
            return str(value)
    raise ConfigError(f"{key} must be of type {kind.__name__}, got {value!r}")


def _coerce(key: str, value: Any, hint: Any) -> Any:
    origin = typing.get_origin(hint)
    if origin in (types.UnionType, typing.Union):
        if value is None:
            return None
        (inner,) = [arg for arg in typing.get_args(hint) if arg is not type(None)]
        return _coerce(key, value, inner)
    if origin is tuple:
        item_type = typing.get_args(hint)[0]
        if isinstance(value, str):
            value = [yaml.safe_load(item.strip()) for item in value.split(",") if item.strip()]
        elif not isinstance(value, (list, tuple)):
            value = [value]
        return tuple(_coerce_scalar(key, item, item_type) for item in value)
    return _coerce_scalar(key, value, hint)


def parse_overrides(overrides: Iterable[str]) -> dict[str, Any]:
    """Parse ``key=value`` strings; values are read as YAML scalars."""
    parsed = {}
    for override in overrides:
        key, sep, raw = override.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"Override must look like key=value, got {override!r}")
        try:
            parsed[key.strip()] = yaml.safe_load(raw) if raw.strip() else None
        except yaml.YAMLError as e:
            raise ConfigError(f"Invalid YAML in override {override!r}: {e}") from e
    return parsed


def read_config_file(path: Path | str) -> dict[str, Any]:
    """Read a YAML mapping of ``key: value`` lines.

    Raises
    ------
    ConfigError
        If the file is not valid YAML or not a mapping.
    """
    try:
        content = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise ConfigError(f"Invalid YAML in config file {path}: {e}") from e
    except OSError as e:
        raise ConfigError(f"Cannot read config file {path}: {e}") from e
    if content is None:
        return {}
    if not isinstance(content, dict):
        raise ConfigError(f"Config file {path} must hold a key: value mapping")
    return content


def load_config(path: Path | str | None = None, overrides: Iterable[str] = ()) -> PipelineConfig:
    """Defaults, updated by the config file, updated by the overrides."""
    config = PipelineConfig()
    if path is not None:
        config = config.with_updates(read_config_file(path), source=f"config file {path}")
    return config.with_updates(parse_overrides(overrides), source="override")


def _check(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


def validate(config: PipelineConfig, required_paths: Iterable[str] = ()) -> None:
    """Check numeric ranges, choices and that the named path settings point at existing files.

    Parameters
    ----------
    config : PipelineConfig
        Configuration to check.
    required_paths : Iterable[str]
        Path settings the calling command needs. The overrides file and checkpoint are
        checked whenever they are set.
    """
    c = config
    for key in required_paths:
        _check(getattr(c, key) is not None, f"{key} is required for this command")
    for key in (*required_paths, "overrides_path", "checkpoint_path"):
        value = getattr(c, key)
        _check(value is None or Path(value).exists(), f"{key} does not exist: {value}")

    positive = (
        "d_emb window embedding_epochs negative min_pts max_cluster_size min_pair_count d_model n_layers n_heads "
        "max_len n_pairs_max max_depth max_length n_negatives batch_size pretrain_steps finetune_epochs "
        "finetune_batch_size synthetic_size"
    )
    for key in positive.split():
        _check(getattr(c, key) >= 1, f"{key} must be at least 1, got {getattr(c, key)}")
    _check(c.checkpoint_every >= 0, f"checkpoint_every must be non-negative, got {c.checkpoint_every}")
    _check(c.d_model % c.n_heads == 0, f"d_model ({c.d_model}) must be divisible by n_heads ({c.n_heads})")
    _check(0.0 < c.eps <= 2.0, f"eps must be in (0, 2], got {c.eps}")
    _check(0.0 < c.masking_rate <= 1.0, f"masking_rate must be in (0, 1], got {c.masking_rate}")
    _check(0.0 <= c.warmup_ratio <= 1.0, f"warmup_ratio must be in [0, 1], got {c.warmup_ratio}")
    _check(min(c.lr, c.finetune_lr, c.experiment_lr) > 0, "learning rates must be positive")
    _check(c.weight_decay >= 0, f"weight_decay must be non-negative, got {c.weight_decay}")
    _check(c.imbalance > 0, f"imbalance must be positive, got {c.imbalance}")
    _check(c.pair_strategy in ("optimal", "greedy"), f"pair_strategy must be optimal or greedy, got {c.pair_strategy}")
    _check(c.task in {t.value for t in Task}, f"Unknown task {c.task!r}; choose from {[t.value for t in Task]}")
    _check(c.experiment in EXPERIMENTS, f"Unknown experiment {c.experiment!r}; choose from {list(EXPERIMENTS)}")
    _check(bool(c.objectives) and set(c.objectives) <= set(OBJECTIVES), f"objectives must be a subset of {OBJECTIVES}")
    _check(bool(c.variants) and set(c.variants) <= set(VARIANTS), f"variants must be a subset of {list(VARIANTS)}")
    _check(bool(c.fractions) and all(0.0 < f <= 1.0 for f in c.fractions), "fractions must lie in (0, 1]")
    _check(bool(c.seeds), "at least one seed is required")


def write_snapshot(config: PipelineConfig, directory: Path | str) -> Path:
    """Write the effective configuration as sorted YAML to ``run_config.txt``."""
    path = Path(directory) / SNAPSHOT_NAME
    path.write_text(yaml.safe_dump(config.to_dict(), sort_keys=True, allow_unicode=True), encoding="utf-8")
    return path
