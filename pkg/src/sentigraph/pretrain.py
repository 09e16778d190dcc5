"""Joint pretraining loop with per-step seeded batches, loss logging and resumable checkpoints."""

import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .corpus import FrequencyTable, Vocabulary
from .graph import SemanticGraph
from .model import Adam, Encoder, load_checkpoint, save_checkpoint
from .objectives import (
    OBJECTIVES,
    LossBreakdown,
    PackedSequence,
    PretrainBatch,
    joint_loss,
    make_contrastive_sets,
    make_masked_sequence,
    make_pair_sequences,
)

logger = logging.getLogger(__name__)

LOSS_LOG_COLUMNS = ["step", "L_sw", "L_ap", "L_ns", "L"]


@dataclass(frozen=True)
class BatchSettings:
    batch_size: int = 32
    masking_rate: float = 0.2
    n_pairs_max: int = 2
    max_depth: int = 2
    max_length: int = 5
    n_negatives: int = 4
    max_len: int = 128


class PretrainBatcher:
    """Draws the examples of every step from ``default_rng([seed, step])``.

    A step's batch depends only on the seed and the step number, so a run resumed
    at step ``s`` sees the batches an uninterrupted run would.
    """

    def __init__(
        self,
        sequences: Sequence[PackedSequence],
        graph: SemanticGraph,
        vocab: Vocabulary,
        frequencies: FrequencyTable,
        settings: BatchSettings = BatchSettings(),
        seed: int = 0,
    ):
        if not sequences:
            raise ValueError("Pretraining needs at least one packed sequence")
        self.sequences = list(sequences)
        self.graph = graph
        self.vocab = vocab
        self.frequencies = frequencies
        self.settings = settings
        self.seed = seed

    def batch(self, step: int) -> PretrainBatch:
        s = self.settings
        rng = np.random.default_rng([self.seed, step])
        chosen = rng.choice(len(self.sequences), size=min(s.batch_size, len(self.sequences)), replace=False)
        batch = PretrainBatch()
        anchors: list[str] = []
        for index in sorted(chosen):
            sequence = self.sequences[index]
            batch.masked.append(make_masked_sequence(sequence, sequence.spans, s.masking_rate, rng))
            batch.pairs += make_pair_sequences(
                self.graph,
                sequence.pairs,
                self.vocab,
                self.frequencies,
                rng,
                max_depth=s.max_depth,
                max_length=s.max_length,
                n_pairs_max=s.n_pairs_max,
                max_len=s.max_len,
            )
            for span in sequence.spans:
                if span.text not in anchors:
                    anchors.append(span.text)
        anchors = [word for word in anchors if word in self.graph]
        if len(anchors) > s.batch_size:
            anchors = [anchors[i] for i in sorted(rng.choice(len(anchors), size=s.batch_size, replace=False))]
        batch.contrastive = make_contrastive_sets(
            self.graph,
            anchors,
            self.vocab,
            self.frequencies,
            rng,
            max_depth=s.max_depth,
            max_length=s.max_length,
            n_negatives=s.n_negatives,
        )
        return batch

    def label_balance(self, steps: Iterable[int]) -> float:
        """Fraction of positive pair sequences over the given steps."""
        labels = [pair.label for step in steps for pair in self.batch(step).pairs]
        return float(np.mean(labels)) if labels else 0.0


class Pretrainer:
    """Adam over the joint loss of a subset of the pretraining objectives.

    Parameters
    ----------
    encoder : Encoder
        Encoder to train in place.
    batcher : PretrainBatcher
        Source of the per-step examples.
    optimizer : Adam
        Optimizer; its ``step_count`` is the number of completed steps.
    objectives : Iterable[str]
        Any of ``"sw"``, ``"ap"``, ``"ns"``.
    metadata : dict | None
        Extra JSON-serialisable values stored with every checkpoint.
    """

    def __init__(
        self,
        encoder: Encoder,
        batcher: PretrainBatcher,
        optimizer: Adam,
        objectives: Iterable[str] = OBJECTIVES,
        metadata: dict | None = None,
    ):
        self.encoder = encoder
        self.batcher = batcher
        self.optimizer = optimizer
        self.objectives = tuple(o for o in OBJECTIVES if o in set(objectives))
        if not self.objectives:
            raise ValueError(f"At least one objective of {OBJECTIVES} is required")
        self.metadata = dict(metadata or {})
        self.history: list[dict] = []

    @property
    def step(self) -> int:
        return self.optimizer.step_count

    def train_step(self) -> LossBreakdown:
        step = self.step + 1
        batch = self.batcher.batch(step)
        breakdown, grads = joint_loss(self.encoder, batch.masked, batch.pairs, batch.contrastive, self.objectives)
        if not grads.is_finite():
            raise ValueError(f"Non-finite gradients at step {step}")
        self.optimizer.step(self.encoder.params, grads)
        self.history.append(breakdown.as_row(step))
        return breakdown

    def train(
        self,
        steps: int,
        checkpoint_path: Path | str | None = None,
        checkpoint_every: int = 0,
        log_every: int = 10,
    ) -> pd.DataFrame:
        """Run until ``steps`` optimizer steps have been taken in total.

        Returns
        -------
        pd.DataFrame
            The loss log of every step run by this trainer, columns ``step, L_sw, L_ap, L_ns, L``.
        """
        while self.step < steps:
            breakdown = self.train_step()
            if log_every and self.step % log_every == 0:
                logger.info(
                    f"step {self.step}: L={breakdown.total:.4f} "
                    f"(sw={breakdown.sw:.4f}, ap={breakdown.ap:.4f}, ns={breakdown.ns:.4f})"
                )
            if checkpoint_path is not None and checkpoint_every and self.step % checkpoint_every == 0:
                self.save(checkpoint_path)
        if checkpoint_path is not None:
            self.save(checkpoint_path)
        return self.loss_log()

    def loss_log(self) -> pd.DataFrame:
        return pd.DataFrame(self.history, columns=LOSS_LOG_COLUMNS)

    def save(self, path: Path | str) -> None:
        save_checkpoint(
            path,
            self.encoder,
            step=self.step,
            optimizer=self.optimizer,
            extra={**self.metadata, "objectives": list(self.objectives), "seed": self.batcher.seed},
        )

    @classmethod
    def resume(cls, path: Path | str, batcher: PretrainBatcher) -> "Pretrainer":
        """Continue from a checkpoint written by `save`."""
        checkpoint = load_checkpoint(path)
        if checkpoint.optimizer is None:
            raise ValueError(f"Checkpoint {path} carries no optimizer state")
        saved_seed = checkpoint.extra.get("seed")
        if saved_seed is not None and saved_seed != batcher.seed:
            raise ValueError(f"Checkpoint {path} was trained with seed {saved_seed}, not {batcher.seed}")
        objectives = checkpoint.extra.get("objectives", OBJECTIVES)
        logger.info(f"Resuming pretraining from step {checkpoint.step} ({path})")
        metadata = {key: value for key, value in checkpoint.extra.items() if key not in ("objectives", "seed")}
        return cls(checkpoint.encoder, batcher, checkpoint.optimizer, objectives, metadata)


def write_loss_log(log: pd.DataFrame, path: Path | str) -> None:
    log.to_csv(path, index=False)
