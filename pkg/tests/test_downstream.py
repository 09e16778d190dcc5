"""Tests for fine-tuning heads, task data and metrics."""

import json

import numpy as np
import pytest

from sentigraph.corpus import CLS_ID, SEP_ID, Vocabulary
from sentigraph.crf import BIO_LABELS
from sentigraph.downstream import (
    ClassificationExample,
    ClsHead,
    ExtractionExample,
    FineTuner,
    Task,
    aspect_classify,
    bio_spans,
    classification_ids,
    classification_metrics,
    dump_predictions,
    evaluate_predictions,
    extraction_ids,
    extraction_metrics,
    finetune,
    load_task_data,
    sentence_classify,
    split_dataset,
    task_labels,
)
from sentigraph.model import Encoder, EncoderConfig

POSITIVE = ("great", "good", "excellent", "nice")
NEGATIVE = ("bad", "poor", "terrible")
ASPECTS = ("color", "material", "price", "fabric")


@pytest.fixture
def vocab():
    return Vocabulary([*ASPECTS, *POSITIVE, *NEGATIVE, "the", "is", ",", "."])


@pytest.fixture
def encoder(vocab):
    return Encoder(EncoderConfig(vocab_size=len(vocab), d_model=16, n_layers=1, n_heads=2, max_len=24, init_std=0.1))


def _sentence_examples(copies: int) -> list[ClassificationExample]:
    examples = []
    for _ in range(copies):
        for i, aspect in enumerate(ASPECTS):
            examples.append(ClassificationExample(f"{POSITIVE[i]} {aspect}", "positive"))
            examples.append(ClassificationExample(f"the {aspect} is {NEGATIVE[i % 3]}", "negative"))
    return examples


def _extraction_examples(copies: int) -> list[ExtractionExample]:
    examples = []
    for _ in range(copies):
        for aspect, sentiment in zip(ASPECTS, POSITIVE):
            examples.append(ExtractionExample((sentiment, aspect, "."), ("B-sentiment", "B-aspect", "O")))
            examples.append(ExtractionExample(("the", aspect, "is", "bad"), ("O", "B-aspect", "O", "B-sentiment")))
    return examples


def test_macro_f1_perfect():
    """Test that identical gold and predictions score 1."""
    report = classification_metrics("sentence", ["a", "b", "a"], ["a", "b", "a"])
    assert report.macro_f1 == 1.0
    assert report.accuracy == 1.0


def test_macro_f1_missing_class():
    """Test that a never-predicted class counts with F1 0."""
    report = classification_metrics("sentence", ["pos", "pos", "neg"], ["pos", "pos", "pos"])
    assert report.per_class == {"neg": 0.0, "pos": pytest.approx(0.8)}
    assert report.macro_f1 == pytest.approx(0.5 * (0.0 + 0.8))
    assert report.accuracy == pytest.approx(2 / 3)


def test_bio_spans():
    """Test span decoding including a stray I- tag."""
    tags = ["B-aspect", "I-aspect", "O", "I-sentiment", "B-sentiment"]
    assert bio_spans(tags) == {("aspect", 0, 1), ("sentiment", 3, 3), ("sentiment", 4, 4)}
    assert bio_spans(["O", "O"]) == set()


def test_extraction_metrics():
    """Test per-kind span F1, their mean and token accuracy."""
    gold = [["B-aspect", "O", "B-sentiment"], ["B-aspect", "I-aspect", "O"]]
    assert extraction_metrics(gold, gold).macro_f1 == 1.0
    predicted = [["O", "O", "B-sentiment"], ["B-aspect", "O", "O"]]
    report = extraction_metrics(gold, predicted)
    assert report.per_class == {"aspect": 0.0, "sentiment": 1.0}
    assert report.macro_f1 == 0.5
    assert report.accuracy == pytest.approx(4 / 6)


def test_extraction_metrics_absent_kind():
    """Test that a kind absent from gold and predictions scores 1."""
    report = extraction_metrics([["B-aspect", "O"]], [["B-aspect", "O"]])
    assert report.per_class["sentiment"] == 1.0
    with pytest.raises(ValueError, match="predictions"):
        extraction_metrics([["O"]], [])


def test_split_dataset():
    """Test a disjoint 7:1:2 split covering every example."""
    examples = list(range(100))
    train, valid, test = split_dataset(examples, seed=1)
    assert (len(train), len(valid), len(test)) == (70, 10, 20)
    assert sorted(train + valid + test) == examples
    assert split_dataset(examples, seed=1) == (train, valid, test)
    with pytest.raises(ValueError, match="Split ratios"):
        split_dataset(examples, ratios=(0.5, 0.5, 0.5))


def test_classification_ids(vocab):
    """Test sentence and aspect input layouts."""
    assert classification_ids(vocab, "great color") == [CLS_ID, vocab.id_of("great"), vocab.id_of("color")]
    ids = classification_ids(vocab, "great color , bad price", aspect="price")
    assert ids[0] == CLS_ID
    assert ids.count(SEP_ID) == 2
    assert ids[-3:] == [SEP_ID, vocab.id_of("price"), SEP_ID]
    assert classification_ids(vocab, "great color , bad price", aspect="price", max_len=6) == [
        CLS_ID,
        vocab.id_of("great"),
        vocab.id_of("color"),
        SEP_ID,
        vocab.id_of("price"),
        SEP_ID,
    ]
    with pytest.raises(ValueError, match="does not fit"):
        classification_ids(vocab, "great color", aspect="price", max_len=3)


def test_extraction_ids(vocab):
    """Test that extraction input is [CLS] plus one id per token."""
    assert extraction_ids(vocab, ["Great", "color"]) == [CLS_ID, vocab.id_of("great"), vocab.id_of("color")]
    with pytest.raises(ValueError, match="do not fit"):
        extraction_ids(vocab, ["good"] * 5, max_len=5)


def test_zero_head_is_uniform(encoder, vocab):
    """Test that a zero classification head gives uniform probabilities."""
    head = ClsHead.create(encoder.config.d_model, ["negative", "neutral", "positive"])
    head.params["cls.w"] = np.zeros_like(head.params["cls.w"])
    np.testing.assert_allclose(sentence_classify(encoder, head, vocab, "great color"), np.full(3, 1 / 3))
    np.testing.assert_allclose(aspect_classify(encoder, head, vocab, "great color , bad price", "price"), np.full(3, 1 / 3))
    with pytest.raises(ValueError, match="at least two classes"):
        ClsHead.create(4, ["positive"])


def test_finetune_separable_sentences(encoder, vocab):
    """Test that fine-tuning learns a lexically separable sentence task."""
    train, valid, test = _sentence_examples(4), _sentence_examples(1), _sentence_examples(1)
    result = finetune(encoder, vocab, Task.SENTENCE, train, valid, test, epochs=15, lr=1e-2, batch_size=8)
    assert result.report.macro_f1 >= 0.9
    assert len(result.valid_history) == 15
    assert len(result.predictions) == len(test)


def test_finetune_keeps_best_epoch(encoder, vocab):
    """Test that the parameters of the best validation epoch are kept."""
    train, valid = _sentence_examples(2), _sentence_examples(1)
    tuner = FineTuner(encoder, vocab, Task.SENTENCE, ["negative", "positive"])
    history = tuner.fit(train, valid, epochs=4, lr=1e-2, batch_size=8)
    assert tuner.evaluate(valid)[0].macro_f1 == max(history)


def test_freeze_encoder(encoder, vocab):
    """Test that a frozen encoder only trains the head and the input encoder is never changed."""
    before = encoder.params.copy()
    train = _sentence_examples(1)
    frozen = FineTuner(encoder, vocab, Task.SENTENCE, ["negative", "positive"], freeze_encoder=True)
    head_before = frozen.params["cls.w"].copy()
    frozen.fit(train, epochs=2, lr=1e-2, batch_size=4)
    assert frozen.trainable() == ["cls.w", "cls.b"]
    assert not np.array_equal(frozen.params["cls.w"], head_before)
    for name in before:
        np.testing.assert_array_equal(frozen.params[name], before[name])

    tuned = FineTuner(encoder, vocab, Task.SENTENCE, ["negative", "positive"])
    tuned.fit(train, epochs=2, lr=1e-2, batch_size=4)
    assert not np.array_equal(tuned.params["tok_emb"], before["tok_emb"])
    assert encoder.params.allclose(before, atol=0.0)


def test_finetune_extraction(encoder, vocab):
    """Test CRF fine-tuning yields one valid BIO tag per token."""
    examples = _extraction_examples(2)
    result = finetune(encoder, vocab, Task.EXTRACTION, examples[:12], examples[12:14], examples[14:], epochs=3, lr=1e-2)
    assert set(result.report.per_class) == {"aspect", "sentiment"}
    for example, tags in zip(examples[14:], result.predictions):
        assert len(tags) == len(example.tokens)
        assert set(tags) <= set(BIO_LABELS)


def test_finetune_rejects_overlapping_splits(encoder, vocab):
    """Test that the same example objects cannot be trained and tested on."""
    examples = _sentence_examples(1)
    with pytest.raises(ValueError, match="disjoint"):
        finetune(encoder, vocab, Task.SENTENCE, examples, [], examples, epochs=1)
    with pytest.raises(ValueError, match="disjoint"):
        finetune(encoder, vocab, Task.SENTENCE, [], examples, examples, epochs=1)


def test_finetune_head_covers_classes_missing_from_train(encoder, vocab):
    """Test that a training subset with a single class still fine-tunes a head over every class."""
    examples = _sentence_examples(2)
    train = [example for example in examples[:8] if example.label == "positive"]
    valid, test = examples[8:10], examples[10:]
    result = finetune(encoder, vocab, Task.SENTENCE, train, valid, test, epochs=1, lr=1e-2, batch_size=4)
    assert len(result.predictions) == len(test)
    assert set(result.predictions) <= {"negative", "positive"}
    assert task_labels(examples) == ["negative", "positive"]

    with pytest.raises(ValueError, match="at least two classes"):
        finetune(encoder, vocab, Task.SENTENCE, train, [], train[:0], epochs=1)


def test_load_task_data(data_dir, tmp_path):
    """Test reading task files and reporting bad records with their line."""
    examples = load_task_data(data_dir / "sentence.jsonl", "sentence")
    assert len(examples) == 10
    assert examples[0] == ClassificationExample("great color", "positive")

    path = tmp_path / "extraction.jsonl"
    path.write_text(
        json.dumps({"tokens": ["good", "fit"], "tags": ["B-sentiment", "B-aspect"]})
        + "\n"
        + json.dumps({"tokens": ["good"], "tags": ["B-opinion"]})
        + "\n",
        encoding="utf-8",
    )
    with pytest.raises(ValueError, match="line 2.*Unknown tags"):
        load_task_data(path, Task.EXTRACTION)

    path.write_text('{"text": "great color"}\n', encoding="utf-8")
    with pytest.raises(ValueError, match="line 1"):
        load_task_data(path, "sentence")


def test_evaluate_predictions(data_dir, tmp_path):
    """Test scoring prediction files of classification and extraction tasks."""
    assert evaluate_predictions(data_dir / "predictions.jsonl", "sentence").macro_f1 == 1.0

    examples = _extraction_examples(1)
    path = tmp_path / "predictions.jsonl"
    dump_predictions(examples, [list(example.tags) for example in examples], path)
    report = evaluate_predictions(path, Task.EXTRACTION)
    assert report.macro_f1 == 1.0

    report.save(tmp_path / "metrics.json")
    saved = json.loads((tmp_path / "metrics.json").read_text(encoding="utf-8"))
    assert saved == {"task": "extraction", "macro_f1": 1.0, "accuracy": 1.0, "per_class": {"aspect": 1.0, "sentiment": 1.0}}

    (tmp_path / "empty.jsonl").write_text("", encoding="utf-8")
    with pytest.raises(ValueError, match="No predictions"):
        evaluate_predictions(tmp_path / "empty.jsonl", "sentence")
