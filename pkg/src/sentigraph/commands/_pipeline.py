"""Pipeline subcommands: mine, pretrain, finetune, eval and experiment."""

import functools
import logging
import shutil
import tempfile
from collections.abc import Callable, Iterator
from contextlib import contextmanager
from pathlib import Path

import click
import pandas as pd

from sentigraph.config import ConfigError, PipelineConfig, load_config, validate, write_snapshot
from sentigraph.corpus import Corpus, Vocabulary, build_frequency_table, ingest, tokenize
from sentigraph.downstream import (
    ClassificationExample,
    Task,
    dump_predictions,
    evaluate_predictions,
    finetune,
    load_task_data,
    split_dataset,
)
from sentigraph.evalkit import (
    ExperimentRunner,
    ExperimentSettings,
    ExperimentSpec,
    aggregate,
    run_ablation,
    run_data_scale,
    write_curve,
    write_results,
)
from sentigraph.graph import SemanticGraph
from sentigraph.model import Adam, Encoder, EncoderConfig, load_checkpoint
from sentigraph.pipeline import MiningSettings, mine_corpus, packed_sequences
from sentigraph.pretrain import BatchSettings, PretrainBatcher, Pretrainer, write_loss_log
from sentigraph.synthetic import generate_benchmark
from sentigraph.term_extraction import Lexicon, tag_corpus

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "encoder.ckpt"
LOSS_LOG_NAME = "loss_log.csv"


def _pipeline_options(command: Callable) -> Callable:
    """Options shared by every subcommand: config file, output dir and ``--set`` overrides."""

    @click.option(
        "-c",
        "--config",
        "config_path",
        type=click.Path(exists=True, dir_okay=False, resolve_path=True),
        help="YAML file of key: value settings.",
        envvar="SENTIGRAPH_CONFIG",
        required=False,
    )
    @click.option(
        "-o",
        "--output-dir",
        "output_dir",
        type=click.Path(file_okay=False),
        help="Directory receiving the outputs. Overrides output_dir from the config.",
        envvar="SENTIGRAPH_OUTPUT_DIR",
        required=False,
    )
    @click.option(
        "-s",
        "--set",
        "overrides",
        multiple=True,
        metavar="KEY=VALUE",
        help="Override one setting; may be repeated. Wins over the config file.",
    )
    @functools.wraps(command)
    def wrapper(config_path: str | None, output_dir: str | None, overrides: tuple[str, ...], **kwargs):
        try:
            config = load_config(config_path, overrides)
            if output_dir is not None:
                config = config.with_updates({"output_dir": output_dir}, source="option")
            return command(config, **kwargs)
        except ConfigError as e:
            raise click.UsageError(str(e)) from e
        except (ValueError, OSError) as e:
            raise click.ClickException(str(e)) from e

    return wrapper


@contextmanager
def atomic_output(config: PipelineConfig) -> Iterator[Path]:
    """Yield a scratch directory whose files move into the output dir only if the block succeeds."""
    output_dir = Path(config.output_dir)
    output_dir.parent.mkdir(parents=True, exist_ok=True)
    scratch = Path(tempfile.mkdtemp(prefix=".sentigraph-", dir=output_dir.parent))
    try:
        yield scratch
        write_snapshot(config, scratch)
        output_dir.mkdir(parents=True, exist_ok=True)
        for item in sorted(scratch.iterdir()):
            target = output_dir / item.name
            if target.is_dir():
                shutil.rmtree(target)
            item.replace(target)
    finally:
        shutil.rmtree(scratch, ignore_errors=True)


def _mining_settings(config: PipelineConfig) -> MiningSettings:
    return MiningSettings(
        d_emb=config.d_emb,
        window=config.window,
        embedding_epochs=config.embedding_epochs,
        negative=config.negative,
        eps=config.eps,
        min_pts=config.min_pts,
        max_cluster_size=config.max_cluster_size,
        min_pair_count=config.min_pair_count,
        pair_strategy=config.pair_strategy,
        seed=config.seed,
    )


def _batch_settings(config: PipelineConfig) -> BatchSettings:
    return BatchSettings(
        batch_size=config.batch_size,
        masking_rate=config.masking_rate,
        n_pairs_max=config.n_pairs_max,
        max_depth=config.max_depth,
        max_length=config.max_length,
        n_negatives=config.n_negatives,
        max_len=config.max_len,
    )


def _encoder_config(config: PipelineConfig, vocab_size: int, seed: int | None = None) -> EncoderConfig:
    return EncoderConfig(
        vocab_size=vocab_size,
        d_model=config.d_model,
        n_layers=config.n_layers,
        n_heads=config.n_heads,
        max_len=config.max_len,
        seed=config.seed if seed is None else seed,
    )


def _experiment_settings(config: PipelineConfig, vocab_size: int) -> ExperimentSettings:
    # experiments pretrain from scratch and use experiment_lr, not the lr of the pretrain command
    return ExperimentSettings(
        encoder=_encoder_config(config, vocab_size),
        batch=_batch_settings(config),
        pretrain_steps=config.pretrain_steps,
        pretrain_lr=config.experiment_lr,
        warmup_ratio=config.warmup_ratio,
        finetune_epochs=config.finetune_epochs,
        finetune_lr=config.finetune_lr,
        finetune_batch_size=config.finetune_batch_size,
        freeze_encoder=config.freeze_encoder,
    )


def _task_vocabulary(examples) -> Vocabulary:
    vocab = Vocabulary()
    for example in examples:
        if isinstance(example, ClassificationExample):
            words = tokenize(example.text).words + (tokenize(example.aspect).words if example.aspect else [])
        else:
            words = [token.lower() for token in example.tokens]
        for word in words:
            vocab.add(word)
    return vocab


def register_pipeline_commands(group: click.Group) -> None:
    """Register the pipeline subcommands on the CLI group.

    Parameters
    ----------
    group : click.Group
        The ``sentigraph`` command group.
    """

    @group.command(name="mine")
    @_pipeline_options
    def mine(config: PipelineConfig):
        """Tag the corpus, cluster the lexicon and build the semantic graph.

        Writes vocab.tsv, spans.jsonl, pairs.jsonl, embeddings, clusters.json and
        graph.json, then prints node and edge counts by kind.
        """
        validate(config, ["corpus_path", "lexicon_path"])
        corpus = ingest(config.corpus_path)
        lexicon = Lexicon.load(config.lexicon_path)
        artifacts = mine_corpus(corpus, lexicon, _mining_settings(config), config.overrides_path)
        with atomic_output(config) as scratch:
            artifacts.save(scratch)
        for key, value in artifacts.graph.stats().items():
            click.echo(f"{key}\t{value}")

    @group.command(name="pretrain")
    @click.option("--resume", is_flag=True, help="Continue from the checkpoint in the output dir, if any.")
    @_pipeline_options
    def pretrain(config: PipelineConfig, resume: bool = False):
        """Pretrain the encoder on the joint objective and write encoder.ckpt and loss_log.csv.

        Checkpoints are written to the output dir every checkpoint_every steps so an
        interrupted run can be continued with --resume.
        """
        validate(config, ["corpus_path", "lexicon_path", "graph_path"])
        corpus = ingest(config.corpus_path)
        tagged = tag_corpus(corpus, Lexicon.load(config.lexicon_path), strategy=config.pair_strategy)
        batcher = PretrainBatcher(
            packed_sequences(tagged, config.max_len),
            SemanticGraph.load(config.graph_path),
            corpus.vocab,
            build_frequency_table(corpus),
            _batch_settings(config),
            seed=config.seed,
        )
        output_dir = Path(config.output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        checkpoint_path = output_dir / CHECKPOINT_NAME
        log_path = output_dir / LOSS_LOG_NAME
        previous = pd.DataFrame()
        if resume and checkpoint_path.exists():
            trainer = Pretrainer.resume(checkpoint_path, batcher)
            if log_path.exists():
                previous = pd.read_csv(log_path)
                previous = previous[previous["step"] <= trainer.step]
        else:
            encoder = Encoder(_encoder_config(config, len(corpus.vocab)))
            optimizer = Adam(
                lr=config.lr,
                warmup_ratio=config.warmup_ratio,
                total_steps=config.pretrain_steps,
                weight_decay=config.weight_decay,
            )
            trainer = Pretrainer(encoder, batcher, optimizer, config.objectives, metadata={"vocab": corpus.vocab.words})
        log = trainer.train(config.pretrain_steps, checkpoint_path, config.checkpoint_every)
        if not previous.empty:
            log = pd.concat([previous, log], ignore_index=True)
        write_loss_log(log, log_path)
        write_snapshot(config, output_dir)
        if len(log):
            click.echo(f"steps\t{trainer.step}\ninitial_loss\t{log['L'].iloc[0]:.6f}\nfinal_loss\t{log['L'].iloc[-1]:.6f}")

    @group.command(name="finetune")
    @_pipeline_options
    def finetune_command(config: PipelineConfig):
        """Fine-tune on task_data (split 7:1:2) and write metrics.json and predictions.jsonl.

        Starts from checkpoint_path when set, from a random encoder otherwise.
        """
        validate(config, ["task_data"])
        examples = load_task_data(config.task_data, config.task)
        if config.checkpoint_path is not None:
            checkpoint = load_checkpoint(config.checkpoint_path)
            if "vocab" not in checkpoint.extra:
                raise ValueError(f"Checkpoint {config.checkpoint_path} carries no vocabulary")
            encoder, vocab = checkpoint.encoder, Vocabulary(checkpoint.extra["vocab"])
        else:
            vocab = _task_vocabulary(examples)
            encoder = Encoder(_encoder_config(config, len(vocab)))
        train, valid, test = split_dataset(examples, seed=config.seed)
        result = finetune(
            encoder,
            vocab,
            config.task,
            train,
            valid,
            test,
            epochs=config.finetune_epochs,
            lr=config.finetune_lr,
            batch_size=config.finetune_batch_size,
            seed=config.seed,
            freeze_encoder=config.freeze_encoder,
        )
        with atomic_output(config) as scratch:
            result.report.save(scratch / "metrics.json")
            dump_predictions(test, result.predictions, scratch / "predictions.jsonl")
        click.echo(f"macro_f1\t{result.report.macro_f1:.4f}\naccuracy\t{result.report.accuracy:.4f}")

    @group.command(name="eval")
    @_pipeline_options
    def eval_command(config: PipelineConfig):
        """Score a predictions JSON-lines file and write metrics.json."""
        validate(config, ["predictions_path"])
        report = evaluate_predictions(config.predictions_path, Task(config.task))
        with atomic_output(config) as scratch:
            report.save(scratch / "metrics.json")
        click.echo(f"macro_f1\t{report.macro_f1:.4f}\naccuracy\t{report.accuracy:.4f}")

    @group.command(name="experiment")
    @_pipeline_options
    def experiment(config: PipelineConfig):
        """Run the ablation or data-scale experiment and write results.csv, summary.csv and curve.dat.

        With synthetic: true the benchmark is generated first and written to benchmark/.
        """
        if config.synthetic:
            validate(config)
            benchmark = generate_benchmark(
                n_corpus=config.synthetic_size, n_task=config.synthetic_size, imbalance=config.imbalance, seed=config.seed
            )
            corpus, lexicon = Corpus.from_lines(benchmark.corpus_lines), benchmark.lexicon
            examples = getattr(benchmark, config.task)
        else:
            validate(config, ["corpus_path", "lexicon_path", "task_data"])
            benchmark = None
            corpus, lexicon = ingest(config.corpus_path), Lexicon.load(config.lexicon_path)
            examples = load_task_data(config.task_data, config.task)
        artifacts = mine_corpus(corpus, lexicon, _mining_settings(config), config.overrides_path)
        settings = _experiment_settings(config, len(corpus.vocab))
        runner = ExperimentRunner(artifacts, split_dataset(examples, seed=config.seed), settings)
        spec = ExperimentSpec(
            task=config.task, variants=config.variants, fractions=config.fractions, seeds=config.seeds
        )
        run = run_ablation if config.experiment == "ablation" else run_data_scale
        results = run(runner, spec)
        summary = aggregate(results)
        with atomic_output(config) as scratch:
            if benchmark is not None:
                benchmark.write(scratch / "benchmark")
            write_results(results, scratch / "results.csv")
            summary.to_csv(scratch / "summary.csv", index=False)
            write_curve(summary, scratch / "curve.dat")
        means = summary[summary["metric"] == "macro_f1"]
        for row in means.itertuples():
            click.echo(f"{row.variant}\t{row.fraction:g}\t{row.mean:.4f} ± {row.std:.4f}")
