"""Ablation and data-scale experiments over pretraining variants, with CSV output."""

import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .downstream import Example, Task, finetune, task_labels
from .model import Adam, Encoder, EncoderConfig
from .pretrain import BatchSettings, PretrainBatcher, Pretrainer
from .pipeline import MinedArtifacts

logger = logging.getLogger(__name__)

VARIANTS = {
    "none": (),
    "sw_only": ("sw",),
    "sw+ap": ("sw", "ap"),
    "sw+ns": ("sw", "ns"),
    "full": ("sw", "ap", "ns"),
}
DATA_SCALE_FRACTIONS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
RESULT_COLUMNS = ["variant", "task", "fraction", "seed", "metric", "value"]
SUMMARY_COLUMNS = ["variant", "task", "fraction", "metric", "mean", "std", "n"]


@dataclass(frozen=True)
class ExperimentSpec:
    """Grid of pretraining variants, data fractions and seeds for one task."""

    task: str = Task.SENTENCE.value
    variants: tuple[str, ...] = tuple(VARIANTS)
    fractions: tuple[float, ...] = (1.0,)
    seeds: tuple[int, ...] = (0,)
    subset_seed: int = 0

    def __post_init__(self):
        Task(self.task)
        unknown = [v for v in self.variants if v not in VARIANTS]
        if unknown or not self.variants:
            raise ValueError(f"Unknown or missing variants {unknown}; choose from {list(VARIANTS)}")
        if not self.fractions or any(not 0.0 < f <= 1.0 for f in self.fractions):
            raise ValueError(f"Fractions must lie in (0, 1], got {self.fractions}")
        if not self.seeds:
            raise ValueError("At least one seed is required")


@dataclass
class ExperimentSettings:
    """Model and schedule settings shared by every cell of an experiment."""

    encoder: EncoderConfig
    batch: BatchSettings = BatchSettings()
    pretrain_steps: int = 200
    pretrain_lr: float = 1e-3
    warmup_ratio: float = 0.1
    finetune_epochs: int = 10
    finetune_lr: float = 1e-3
    finetune_batch_size: int = 32
    freeze_encoder: bool = False


def fraction_subset(examples: Sequence, fraction: float, seed: int = 0) -> list:
    """The first ``round(fraction * n)`` examples of a fixed permutation, kept in their original order.

    Smaller fractions give subsets of larger ones, and 1.0 gives the input unchanged.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    order = np.random.default_rng(seed).permutation(len(examples))
    size = max(1, int(round(fraction * len(examples)))) if examples else 0
    return [examples[i] for i in sorted(order[:size])]


@dataclass
class ExperimentRunner:
    """Runs experiment cells, pretraining each (variant, seed) encoder at most once."""

    artifacts: MinedArtifacts
    splits: tuple[Sequence[Example], Sequence[Example], Sequence[Example]]
    settings: ExperimentSettings
    _encoders: dict[tuple[str, int], Encoder] = field(default_factory=dict, repr=False)

    def encoder_for(self, variant: str, seed: int) -> Encoder:
        key = (variant, seed)
        if key not in self._encoders:
            config = replace(self.settings.encoder, seed=seed)
            encoder = Encoder(config)
            objectives = VARIANTS[variant]
            if objectives:
                logger.info(f"Pretraining variant {variant} with seed {seed}")
                batcher = PretrainBatcher(
                    self.artifacts.sequences(min(config.max_len, self.settings.batch.max_len)),
                    self.artifacts.graph,
                    self.artifacts.corpus.vocab,
                    self.artifacts.frequencies,
                    self.settings.batch,
                    seed=seed,
                )
                optimizer = Adam(
                    lr=self.settings.pretrain_lr,
                    warmup_ratio=self.settings.warmup_ratio,
                    total_steps=self.settings.pretrain_steps,
                )
                Pretrainer(encoder, batcher, optimizer, objectives).train(self.settings.pretrain_steps)
            self._encoders[key] = encoder
        return self._encoders[key]

    def run_cell(self, variant: str, task: str, fraction: float, seed: int, subset_seed: int = 0) -> list[dict]:
        train, valid, test = self.splits
        labels = None if Task(task) is Task.EXTRACTION else task_labels([*train, *valid, *test])
        report = finetune(
            self.encoder_for(variant, seed),
            self.artifacts.corpus.vocab,
            task,
            fraction_subset(train, fraction, subset_seed),
            valid,
            test,
            epochs=self.settings.finetune_epochs,
            lr=self.settings.finetune_lr,
            batch_size=self.settings.finetune_batch_size,
            seed=seed,
            freeze_encoder=self.settings.freeze_encoder,
            labels=labels,
        ).report
        metrics = {"macro_f1": report.macro_f1, "accuracy": report.accuracy}
        metrics.update({f"f1[{label}]": value for label, value in report.per_class.items()})
        base = {"variant": variant, "task": task, "fraction": fraction, "seed": seed}
        return [{**base, "metric": metric, "value": value} for metric, value in metrics.items()]

    def run(self, spec: ExperimentSpec) -> pd.DataFrame:
        rows = []
        for variant in spec.variants:
            for seed in spec.seeds:
                for fraction in spec.fractions:
                    rows += self.run_cell(variant, spec.task, fraction, seed, spec.subset_seed)
        return pd.DataFrame(rows, columns=RESULT_COLUMNS)


def run_ablation(runner: ExperimentRunner, spec: ExperimentSpec) -> pd.DataFrame:
    """One row per variant, seed and metric on the full training split (or the requested fractions)."""
    logger.info(f"Ablation over {list(spec.variants)} with seeds {list(spec.seeds)}")
    return runner.run(spec)


def run_data_scale(runner: ExperimentRunner, spec: ExperimentSpec) -> pd.DataFrame:
    """Metric per fraction, variant and seed; a grid left at full data sweeps 10% to 100%."""
    if spec.fractions == (1.0,):
        spec = replace(spec, fractions=DATA_SCALE_FRACTIONS)
    logger.info(f"Data-scale sweep over fractions {list(spec.fractions)}")
    return runner.run(spec)


def aggregate(results: pd.DataFrame) -> pd.DataFrame:
    """Mean, sample standard deviation and count over seeds per variant, task, fraction and metric."""
    grouped = results.groupby(["variant", "task", "fraction", "metric"], sort=True)["value"]
    summary = grouped.agg(mean="mean", std="std", n="count").reset_index()
    summary["std"] = summary["std"].fillna(0.0)
    return summary[SUMMARY_COLUMNS]


def write_results(results: pd.DataFrame, path: Path | str) -> None:
    results.to_csv(path, index=False, columns=RESULT_COLUMNS)


def read_results(path: Path | str) -> pd.DataFrame:
    results = pd.read_csv(path)
    if list(results.columns) != RESULT_COLUMNS:
        raise ValueError(f"{path} does not have the columns {RESULT_COLUMNS}")
    return results


def write_curve(summary: pd.DataFrame, path: Path | str, metric: str = "macro_f1") -> None:
    """Whitespace-separated table with one row per fraction and one mean column per variant, for gnuplot."""
    table = summary[summary["metric"] == metric].pivot_table(index="fraction", columns="variant", values="mean")
    with open(path, "w", encoding="utf-8") as f:
        f.write("# fraction " + " ".join(table.columns) + "\n")
        for fraction, row in table.iterrows():
            f.write(f"{fraction:g} " + " ".join(f"{value:.6f}" for value in row) + "\n")


def compare(summary: pd.DataFrame, variants: Iterable[str], metric: str = "macro_f1") -> pd.DataFrame:
    """Mean of ``metric`` per fraction (rows) and variant (columns)."""
    subset = summary[(summary["metric"] == metric) & summary["variant"].isin(list(variants))]
    return subset.pivot_table(index="fraction", columns="variant", values="mean")
