import json

import pytest

from hiercase.evalbench import CharRnnModel
from hiercase.hiermodel import HierModel
from hiercase.textcore import CorpusError, Sentence
from hiercase.training import (
    TrainConfig,
    TrainResult,
    distill_lines,
    ingest_or_abort,
    load_model,
    split_corpus,
    train,
)

CORPUS = [
    "The cat sat on the mat",
    "We love the iPhone",
    "The iPhone rocks",
    "NASA launched a rocket",
    "Plain words only here",
    "She met Dr Smith",
    "The API returns JSON",
    "He bought an iPhone",
    "Rain fell on Paris",
    "The rocket landed",
]


def sents(lines):
    return [Sentence.from_line(ln) for ln in lines]


def test_config_validation():
    with pytest.raises(ValueError, match="arch"):
        TrainConfig(arch="transformer")
    with pytest.raises(ValueError, match="validation_fraction"):
        TrainConfig(validation_fraction=0.0)
    with pytest.raises(ValueError, match="validation_fraction"):
        TrainConfig(validation_fraction=0.6)
    with pytest.raises(ValueError, match="dtype"):
        TrainConfig(dtype="float16")
    with pytest.raises(ValueError, match="positive"):
        TrainConfig(learning_rate=0.0)


def test_split_corpus_is_deterministic_and_disjoint():
    corpus = sents(CORPUS)
    train1, valid1 = split_corpus(corpus, 0.2, seed=4)
    train2, valid2 = split_corpus(corpus, 0.2, seed=4)
    assert train1 == train2 and valid1 == valid2
    assert len(valid1) == 2 and len(train1) == 8
    assert not set(s.text for s in train1) & set(s.text for s in valid1)
    with pytest.raises(CorpusError):
        split_corpus(corpus[:1], 0.2, seed=0)


def test_train_memorizes_small_corpus():
    config = TrainConfig(epochs=60, batch_size=10, seed=1,
                         validation_fraction=0.1, patience=60,
                         learning_rate=3e-3, eval_sentences=10,
                         target_train_accuracy=1.0)
    result = train(sents(CORPUS), config)
    assert isinstance(result, TrainResult)
    last = result.log[-1]
    assert last["train_word_acc"] == 1.0
    assert last["train_char_acc"] == 1.0
    assert result.stopped_early
    # log records are JSON-serializable and complete
    for record in result.log:
        parsed = json.loads(json.dumps(record))
        for key in ("epoch", "train_loss", "valid_loss", "valid_f1",
                    "seconds"):
            assert key in parsed


def test_retained_checkpoint_validates_no_worse_than_final():
    config = TrainConfig(epochs=8, batch_size=4, seed=3,
                         validation_fraction=0.2, patience=8,
                         eval_sentences=10)
    result = train(sents(CORPUS), config)
    valid_losses = [r["valid_loss"] for r in result.log]
    best = result.best_epoch
    assert best >= 1
    assert valid_losses[best - 1] <= valid_losses[-1] + 1e-9


def test_same_seed_is_byte_identical():
    config = TrainConfig(epochs=3, batch_size=4, seed=7,
                         validation_fraction=0.2, eval_sentences=5)
    corpus = sents(CORPUS)
    model1 = train(corpus, config).model
    model2 = train(corpus, config).model
    assert model1.to_bytes() == model2.to_bytes()


def test_different_seed_differs():
    corpus = sents(CORPUS)
    config1 = TrainConfig(epochs=2, batch_size=4, seed=7, eval_sentences=5)
    config2 = TrainConfig(epochs=2, batch_size=4, seed=8, eval_sentences=5)
    assert train(corpus, config1).model.to_bytes() != \
        train(corpus, config2).model.to_bytes()


def test_charrnn_arch_trains_and_loss_drops():
    config = TrainConfig(arch="charrnn", epochs=12, batch_size=5, seed=2,
                         validation_fraction=0.2, patience=12,
                         learning_rate=3e-3, eval_sentences=5)
    result = train(sents(CORPUS[:5]), config)
    assert isinstance(result.model, CharRnnModel)
    assert result.log[-1]["train_loss"] < result.log[0]["train_loss"]


def test_empty_corpus_rejected():
    with pytest.raises(CorpusError):
        train([], TrainConfig())


def test_on_epoch_callback_sees_every_epoch():
    seen = []
    config = TrainConfig(epochs=2, batch_size=5, seed=0, eval_sentences=5)
    train(sents(CORPUS), config, on_epoch=seen.append)
    assert [r["epoch"] for r in seen] == [1, 2]


def test_ingest_or_abort_threshold():
    good = CORPUS[:6]
    bad = ["", "   "]
    assert len(ingest_or_abort(good + bad, max_skip_fraction=0.5)) == 6
    with pytest.raises(CorpusError, match="rejected"):
        ingest_or_abort(good + bad, max_skip_fraction=0.1)
    with pytest.raises(CorpusError, match="empty"):
        ingest_or_abort([], max_skip_fraction=0.1)


def test_load_model_dispatches_on_arch(tmp_path):
    from hiercase.hiermodel import ModelConfig

    tiny = ModelConfig(8, 8, 1, 1, 1, 8, 8, num_buckets=37)
    hier_path = str(tmp_path / "h.hcm")
    char_path = str(tmp_path / "c.hcm")
    HierModel(tiny, seed=0).save(hier_path)
    CharRnnModel(tiny, seed=0).save(char_path)
    assert isinstance(load_model(hier_path), HierModel)
    assert isinstance(load_model(char_path), CharRnnModel)


def test_load_model_rejects_unknown_arch(tmp_path):
    from hiercase import modelio

    path = str(tmp_path / "x.hcm")
    modelio.write_model(path, {"arch": "mystery", "tensors": []}, [])
    with pytest.raises(modelio.ModelFormatError, match="arch"):
        load_model(path)


def test_distill_lines_stream():
    from hiercase.hiermodel import ModelConfig

    tiny = ModelConfig(8, 8, 1, 1, 1, 8, 8, num_buckets=37)
    teacher = HierModel(tiny, seed=4)
    lines = ["The cat", "", "iphone time", "   "]
    out = list(distill_lines(teacher, lines))
    assert len(out) == 4
    assert out[1] == "" and out[3] == ""
    for src, dst in ((lines[0], out[0]), (lines[2], out[2])):
        assert Sentence.from_line(dst).lowered() == \
            Sentence.from_line(src).lowered()
    assert list(distill_lines(teacher, [])) == []


def test_charrnn_overfits_ten_sentences():
    cfg = TrainConfig(preset="student", arch="charrnn", epochs=80,
                      batch_size=10, learning_rate=3e-3, seed=2,
                      validation_fraction=0.1, patience=80,
                      eval_sentences=1, target_train_accuracy=1.0)
    result = train([Sentence.from_line(s) for s in CORPUS], cfg)
    assert result.log[-1]["train_char_acc"] == 1.0
