"""Fine-tuning heads, task data and metrics for sentence, aspect and extraction tasks."""

import json
import logging
from collections.abc import Hashable, Sequence
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.special import log_softmax, softmax
from sklearn.metrics import accuracy_score, f1_score

from .corpus import CLS_ID, SEP_ID, Vocabulary
from .crf import BIO_LABELS, CrfLayer, crf_nll, crf_viterbi
from .model import Adam, Encoder, ParamSet

logger = logging.getLogger(__name__)


class Task(str, Enum):
    SENTENCE = "sentence"
    ASPECT = "aspect"
    EXTRACTION = "extraction"


@dataclass(frozen=True)
class ClassificationExample:
    text: str
    label: Hashable
    aspect: str | None = None


@dataclass(frozen=True)
class ExtractionExample:
    tokens: tuple[str, ...]
    tags: tuple[str, ...]


Example = ClassificationExample | ExtractionExample


@dataclass
class MetricsReport:
    task: str
    macro_f1: float
    accuracy: float
    per_class: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


class ClsHead:
    """Linear classifier over the ``[CLS]`` state, stored as ``cls.w`` and ``cls.b``."""

    def __init__(self, params: ParamSet, labels: Sequence[Hashable]):
        if len(labels) < 2:
            raise ValueError(f"A classification head needs at least two classes, got {list(labels)}")
        self.params = params
        self.labels = tuple(labels)

    @classmethod
    def create(cls, d_model: int, labels: Sequence[Hashable], seed: int = 0, init_std: float = 0.02) -> "ClsHead":
        rng = np.random.default_rng(seed)
        params = ParamSet({"cls.w": rng.normal(0.0, init_std, size=(d_model, len(labels))), "cls.b": np.zeros(len(labels))})
        return cls(params, labels)

    @property
    def n_classes(self) -> int:
        return len(self.labels)

    def logits(self, cls_state: np.ndarray) -> np.ndarray:
        return cls_state @ self.params["cls.w"] + self.params["cls.b"]


def classification_ids(vocab: Vocabulary, text: str, aspect: str | None = None, max_len: int = 128) -> list[int]:
    """``[CLS] text`` or, with an aspect, ``[CLS] text [SEP] aspect [SEP]``; the text is truncated to fit."""
    if aspect is None:
        return [CLS_ID, *vocab.encode(text)][:max_len]
    aspect_ids = vocab.encode(aspect)
    room = max_len - len(aspect_ids) - 3
    if room < 0:
        raise ValueError(f"Aspect {aspect!r} does not fit in max_len {max_len}")
    return [CLS_ID, *vocab.encode(text)[:room], SEP_ID, *aspect_ids, SEP_ID]


def extraction_ids(vocab: Vocabulary, tokens: Sequence[str], max_len: int = 128) -> list[int]:
    if len(tokens) + 1 > max_len:
        raise ValueError(f"{len(tokens)} tokens do not fit in max_len {max_len}")
    return [CLS_ID, *(vocab.id_of(token) for token in tokens)]


def sentence_classify(encoder: Encoder, head: ClsHead, vocab: Vocabulary, sentence: str) -> np.ndarray:
    """Class probabilities of a sentence from its ``[CLS]`` state."""
    hidden = encoder.encode(classification_ids(vocab, sentence, max_len=encoder.config.max_len))
    return softmax(head.logits(hidden[0]))


def aspect_classify(encoder: Encoder, head: ClsHead, vocab: Vocabulary, context: str, aspect_text: str) -> np.ndarray:
    """Class probabilities of the polarity towards ``aspect_text`` in ``context``."""
    hidden = encoder.encode(classification_ids(vocab, context, aspect_text, max_len=encoder.config.max_len))
    return softmax(head.logits(hidden[0]))


def bio_spans(tags: Sequence[str]) -> set[tuple[str, int, int]]:
    """``(kind, first, last)`` spans of a BIO tag sequence; a stray ``I-`` tag opens a span."""
    spans, current = set(), None
    for i, tag in enumerate([*tags, "O"]):
        prefix, _, kind = tag.partition("-")
        if current is not None and (prefix != "I" or kind != current[0]):
            spans.add((current[0], current[1], i - 1))
            current = None
        if prefix == "B" or (prefix == "I" and current is None):
            current = (kind, i)
    return spans


def classification_metrics(task: str, gold: Sequence[Hashable], predicted: Sequence[Hashable]) -> MetricsReport:
    """Macro-F1 over the classes present in gold or predictions, accuracy and per-class F1."""
    labels = sorted(set(gold) | set(predicted), key=str)
    per_class = f1_score(gold, predicted, labels=labels, average=None, zero_division=0)
    return MetricsReport(
        task=task,
        macro_f1=float(f1_score(gold, predicted, labels=labels, average="macro", zero_division=0)),
        accuracy=float(accuracy_score(gold, predicted)),
        per_class={str(label): float(score) for label, score in zip(labels, per_class)},
    )


def extraction_metrics(gold: Sequence[Sequence[str]], predicted: Sequence[Sequence[str]]) -> MetricsReport:
    """Exact-match span F1 per term kind, their mean as macro-F1, and token accuracy.

    A kind with no gold and no predicted spans scores 1.0.
    """
    if len(gold) != len(predicted):
        raise ValueError(f"{len(gold)} gold sequences but {len(predicted)} predictions")
    per_class = {}
    for kind in ("aspect", "sentiment"):
        true_positive = n_gold = n_predicted = 0
        for gold_tags, predicted_tags in zip(gold, predicted):
            gold_spans = {span for span in bio_spans(gold_tags) if span[0] == kind}
            predicted_spans = {span for span in bio_spans(predicted_tags) if span[0] == kind}
            true_positive += len(gold_spans & predicted_spans)
            n_gold += len(gold_spans)
            n_predicted += len(predicted_spans)
        per_class[kind] = 1.0 if n_gold + n_predicted == 0 else 2.0 * true_positive / (n_gold + n_predicted)
    flat_gold = [tag for tags in gold for tag in tags]
    flat_predicted = [tag for tags in predicted for tag in tags]
    return MetricsReport(
        task=Task.EXTRACTION.value,
        macro_f1=float(np.mean(list(per_class.values()))),
        accuracy=float(accuracy_score(flat_gold, flat_predicted)) if flat_gold else 1.0,
        per_class=per_class,
    )


def split_dataset(
    examples: Sequence, seed: int = 0, ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)
) -> tuple[list, list, list]:
    """Shuffle and split into disjoint train/valid/test lists (7:1:2 by default)."""
    if len(ratios) != 3 or min(ratios) < 0 or not np.isclose(sum(ratios), 1.0):
        raise ValueError(f"Split ratios must be three non-negative numbers summing to 1, got {ratios}")
    order = np.random.default_rng(seed).permutation(len(examples))
    n_train = int(np.floor(ratios[0] * len(examples)))
    n_valid = int(np.floor(ratios[1] * len(examples)))
    shuffled = [examples[i] for i in order]
    return shuffled[:n_train], shuffled[n_train : n_train + n_valid], shuffled[n_train + n_valid :]


def task_labels(examples: Sequence[ClassificationExample]) -> list:
    """Sorted distinct labels of classification examples."""
    return sorted({example.label for example in examples}, key=str)


def parse_example(record: dict, task: Task | str) -> Example:
    task = Task(task)
    if task is Task.EXTRACTION:
        tokens, tags = tuple(record["tokens"]), tuple(record["tags"])
        if len(tokens) != len(tags):
            raise ValueError(f"{len(tokens)} tokens but {len(tags)} tags")
        unknown = set(tags) - set(BIO_LABELS)
        if unknown:
            raise ValueError(f"Unknown tags {sorted(unknown)}")
        return ExtractionExample(tokens, tags)
    if task is Task.ASPECT:
        return ClassificationExample(record["text"], record["label"], record["aspect"])
    return ClassificationExample(record["text"], record["label"])


def load_task_data(path: Path | str, task: Task | str) -> list[Example]:
    """Read a JSON-lines task file: ``{text, label}``, ``{text, aspect, label}`` or ``{tokens, tags}``."""
    examples = []
    with open(path, encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                examples.append(parse_example(json.loads(line), task))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise ValueError(f"{path}, line {line_number}: invalid {Task(task).value} record: {e}") from e
    return examples


def save_task_data(examples: Sequence[Example], path: Path | str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for example in examples:
            record = asdict(example)
            if isinstance(example, ClassificationExample) and example.aspect is None:
                del record["aspect"]
            f.write(json.dumps(record, ensure_ascii=False) + "\n")


def dump_predictions(examples: Sequence[Example], predictions: Sequence, path: Path | str) -> None:
    """Write gold and predicted values side by side as JSON-lines."""
    with open(path, "w", encoding="utf-8") as f:
        for example, prediction in zip(examples, predictions):
            if isinstance(example, ExtractionExample):
                record = {"tokens": list(example.tokens), "tags": list(example.tags), "predicted_tags": list(prediction)}
            else:
                record = {"text": example.text, "label": example.label, "prediction": prediction}
                if example.aspect is not None:
                    record["aspect"] = example.aspect
            f.write(json.dumps(record, ensure_ascii=False) + "\n")


def evaluate_predictions(path: Path | str, task: Task | str) -> MetricsReport:
    """Metrics of a prediction file written by `dump_predictions` (or any file with the same fields)."""
    task = Task(task)
    gold, predicted = [], []
    with open(path, encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                if task is Task.EXTRACTION:
                    gold.append(record["tags"])
                    predicted.append(record["predicted_tags"])
                else:
                    gold.append(record["label"])
                    predicted.append(record["prediction"])
            except (json.JSONDecodeError, KeyError) as e:
                raise ValueError(f"{path}, line {line_number}: invalid prediction record: {e}") from e
    if not gold:
        raise ValueError(f"No predictions in {path}")
    if task is Task.EXTRACTION:
        return extraction_metrics(gold, predicted)
    return classification_metrics(task.value, gold, predicted)


@dataclass
class FinetuneResult:
    report: MetricsReport
    predictions: list
    encoder: Encoder
    valid_history: list[float] = field(default_factory=list)


class FineTuner:
    """Encoder plus task head trained together with Adam.

    The encoder's parameters are copied, so the encoder passed in (e.g. a loaded
    checkpoint) is never modified. Head parameters share the copied `ParamSet`.
    """

    def __init__(
        self,
        encoder: Encoder,
        vocab: Vocabulary,
        task: Task | str,
        labels: Sequence[Hashable] = (),
        seed: int = 0,
        freeze_encoder: bool = False,
    ):
        self.task = Task(task)
        self.vocab = vocab
        params = encoder.params.copy()
        d_model = encoder.config.d_model
        if self.task is Task.EXTRACTION:
            self.crf = CrfLayer.create(d_model, seed=seed)
            params.update(self.crf.params)
            self.crf.params = params
            self.head_prefix = "crf."
        else:
            self.head = ClsHead.create(d_model, labels, seed=seed)
            params.update(self.head.params)
            self.head.params = params
            self.head_prefix = "cls."
        self.encoder = Encoder(encoder.config, params)
        self.freeze_encoder = freeze_encoder

    @property
    def params(self) -> ParamSet:
        return self.encoder.params

    def trainable(self) -> list[str]:
        if self.freeze_encoder:
            return [name for name in self.params.names if name.startswith(self.head_prefix)]
        return self.params.names

    def _ids(self, example: Example) -> list[int]:
        max_len = self.encoder.config.max_len
        if isinstance(example, ExtractionExample):
            return extraction_ids(self.vocab, example.tokens, max_len)
        return classification_ids(self.vocab, example.text, example.aspect, max_len)

    def loss(self, example: Example, grads: ParamSet) -> float:
        """Loss of one example; gradients are accumulated into ``grads``."""
        hidden, cache = self.encoder.forward(self._ids(example))
        d_hidden = np.zeros_like(hidden)
        if isinstance(example, ExtractionExample):
            h = hidden[1:]
            tags = [BIO_LABELS.index(tag) for tag in example.tags]
            loss, d_emissions, _ = crf_nll(self.crf, self.crf.emissions(h), tags, grads)
            grads["crf.w"] += h.T @ d_emissions
            grads["crf.b"] += d_emissions.sum(axis=0)
            d_hidden[1:] = d_emissions @ self.params["crf.w"].T
        else:
            logits = self.head.logits(hidden[0])
            target = self.head.labels.index(example.label)
            loss = -float(log_softmax(logits)[target])
            d_logits = softmax(logits)
            d_logits[target] -= 1.0
            grads["cls.w"] += np.outer(hidden[0], d_logits)
            grads["cls.b"] += d_logits
            d_hidden[0] = d_logits @ self.params["cls.w"].T
        if not self.freeze_encoder:
            self.encoder.backward(cache, d_hidden, grads)
        return loss

    def predict(self, example: Example):
        hidden = self.encoder.encode(self._ids(example))
        if isinstance(example, ExtractionExample):
            path, _ = crf_viterbi(self.crf, self.crf.emissions(hidden[1:]))
            return [BIO_LABELS[i] for i in path]
        return self.head.labels[int(np.argmax(self.head.logits(hidden[0])))]

    def evaluate(self, examples: Sequence[Example]) -> tuple[MetricsReport, list]:
        predictions = [self.predict(example) for example in examples]
        if self.task is Task.EXTRACTION:
            return extraction_metrics([e.tags for e in examples], predictions), predictions
        return classification_metrics(self.task.value, [e.label for e in examples], predictions), predictions

    def fit(
        self,
        train: Sequence[Example],
        valid: Sequence[Example] = (),
        epochs: int = 10,
        lr: float = 1e-5,
        batch_size: int = 32,
        seed: int = 0,
    ) -> list[float]:
        """Mini-batch Adam; keeps the parameters of the epoch with the best validation macro-F1.

        Returns
        -------
        list[float]
            Validation macro-F1 after every epoch (empty without validation data).
        """
        if not train:
            raise ValueError("Fine-tuning needs at least one training example")
        rng = np.random.default_rng(seed)
        total_steps = epochs * int(np.ceil(len(train) / batch_size))
        optimizer = Adam(lr=lr, warmup_ratio=0.1, total_steps=total_steps)
        names = self.trainable()
        history, best, best_params = [], -1.0, None
        for epoch in range(1, epochs + 1):
            order = rng.permutation(len(train))
            epoch_loss = 0.0
            for start in range(0, len(train), batch_size):
                indices = order[start : start + batch_size]
                grads = self.params.zeros_like()
                for index in indices:
                    epoch_loss += self.loss(train[index], grads)
                for name in names:
                    grads[name] /= len(indices)
                optimizer.step(self.params, grads, names)
            logger.info(f"{self.task.value} epoch {epoch}: train loss {epoch_loss / len(train):.4f}")
            if valid:
                score = self.evaluate(valid)[0].macro_f1
                history.append(score)
                if score > best:
                    best, best_params = score, self.params.copy()
        if best_params is not None:
            self.params.update(best_params)
        return history


def finetune(
    encoder: Encoder,
    vocab: Vocabulary,
    task: Task | str,
    train: Sequence[Example],
    valid: Sequence[Example],
    test: Sequence[Example],
    epochs: int = 10,
    lr: float = 1e-5,
    batch_size: int = 32,
    seed: int = 0,
    freeze_encoder: bool = False,
    labels: Sequence[Hashable] | None = None,
) -> FinetuneResult:
    """Fine-tune a task head (and the encoder unless frozen), then evaluate on the test split.

    The head covers ``labels`` when given, otherwise every label seen in any of the three splits,
    so a small training subset that misses a class still gets a full head.

    Raises
    ------
    ValueError
        If the splits overlap or the task has fewer than two classes.
    """
    task = Task(task)
    train_ids, valid_ids, test_ids = set(map(id, train)), set(map(id, valid)), set(map(id, test))
    if train_ids & test_ids or train_ids & valid_ids or valid_ids & test_ids:
        raise ValueError("Train, valid and test splits must be disjoint")
    if task is Task.EXTRACTION:
        labels = []
    elif labels is None:
        labels = task_labels([*train, *valid, *test])
    tuner = FineTuner(encoder, vocab, task, labels, seed=seed, freeze_encoder=freeze_encoder)
    history = tuner.fit(train, valid, epochs=epochs, lr=lr, batch_size=batch_size, seed=seed)
    report, predictions = tuner.evaluate(test)
    logger.info(f"{task.value}: test macro-F1 {report.macro_f1:.4f}, accuracy {report.accuracy:.4f}")
    return FinetuneResult(report, predictions, tuner.encoder, history)
