"""Training loop with early stopping, plus teacher-to-student distillation.

One Adam loop drives both architectures through the shared batch-loss
protocol. The checkpoint kept is the one with the best validation loss, so
the returned model never validates worse than the last epoch. Distillation
is a streaming pass: the teacher truecases a plain-text corpus line by line
and the output doubles as gold-cased training text for the student.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from . import modelio
from .autodiff import backward
from .evalbench import ARCH_CHAR, CharRnnModel, eval_nl
from .hiermodel import ARCH_HIER, HierModel, preset_config
from .nnlayers import Adam
from .textcore import CorpusError, Sentence, ingest_lines, pair_from_gold

EpochCallback = Callable[[dict], None]


@dataclass(frozen=True, slots=True)
class TrainConfig:
    preset: str = "student"
    arch: str = ARCH_HIER
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-3
    clip_norm: float = 5.0
    seed: int = 0
    validation_fraction: float = 0.1
    patience: int = 5
    dtype: str = "float32"
    eval_sentences: int = 400
    target_train_accuracy: float | None = None
    max_skip_fraction: float = 0.10

    def __post_init__(self) -> None:
        if self.arch not in (ARCH_HIER, ARCH_CHAR):
            raise ValueError(f"unknown arch {self.arch!r}")
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ValueError("epochs, batch_size, and patience must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 < self.validation_fraction <= 0.5:
            raise ValueError("validation_fraction must be in (0, 0.5]")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"unsupported dtype {self.dtype!r}")
        if not 0.0 <= self.max_skip_fraction < 1.0:
            raise ValueError("max_skip_fraction must be in [0, 1)")
        if self.eval_sentences < 1:
            raise ValueError("eval_sentences must be >= 1")


@dataclass(slots=True)
class TrainResult:
    model: object
    log: list[dict]
    best_epoch: int
    stopped_early: bool
    diverged: bool


def build_model(config: TrainConfig):
    mcfg = preset_config(config.preset)
    if config.arch == ARCH_HIER:
        return HierModel(mcfg, seed=config.seed, dtype=config.dtype)
    return CharRnnModel(mcfg, seed=config.seed, dtype=config.dtype)


def load_model(path: str):
    """Open a stored model of either architecture."""
    manifest, arrays, scales = modelio.read_model(path)
    arch = manifest.get("arch")
    if arch == ARCH_HIER:
        return HierModel.from_parts(manifest, arrays, scales)
    if arch == ARCH_CHAR:
        return CharRnnModel.from_parts(manifest, arrays, scales)
    raise modelio.ModelFormatError(f"unknown arch {arch!r}")


def split_corpus(sentences: Sequence[Sentence], fraction: float,
                 seed: int) -> tuple[list[Sentence], list[Sentence]]:
    """Deterministic shuffled split into (train, valid)."""
    if len(sentences) < 2:
        raise CorpusError("need at least 2 sentences to hold out validation")
    rng = np.random.RandomState(seed)
    perm = rng.permutation(len(sentences))
    n_valid = min(max(1, int(round(len(sentences) * fraction))),
                  len(sentences) - 1)
    valid = [sentences[i] for i in perm[:n_valid]]
    train = [sentences[i] for i in perm[n_valid:]]
    return train, valid


def _make_batches(lengths: list[int], batch_size: int,
                  rng: np.random.RandomState) -> list[list[int]]:
    """Shuffle, then sort by length inside windows so pads stay short."""
    order = list(rng.permutation(len(lengths)))
    window = batch_size * 16
    bucketed: list[int] = []
    for start in range(0, len(order), window):
        chunk = order[start:start + window]
        chunk.sort(key=lambda i: (lengths[i], i))
        bucketed.extend(chunk)
    return [bucketed[i:i + batch_size]
            for i in range(0, len(bucketed), batch_size)]


def _valid_f1(model, sentences: Sequence[Sentence], limit: int) -> float:
    subset = list(sentences[:limit])
    preds = [model.truecase(s) for s in subset]
    return eval_nl(preds, subset).f1


def _accuracy(correct: int, total: int) -> float:
    # A side with nothing to predict is vacuously right.
    return correct / total if total else 1.0


def train(sentences: Sequence[Sentence], config: TrainConfig,
          on_epoch: EpochCallback | None = None) -> TrainResult:
    """Fit a model on gold-cased sentences; returns the best checkpoint.

    The log holds one JSON-ready record per epoch. Early stopping waits
    `patience` epochs without improvement in validation loss or F1.
    A non-finite loss aborts the run and the last good checkpoint wins.
    """
    if not sentences:
        raise CorpusError("empty corpus")
    train_set, valid_set = split_corpus(sentences, config.validation_fraction,
                                        config.seed)
    model = build_model(config)
    opt = Adam(model.params(), lr=config.learning_rate,
               clip_norm=config.clip_norm)
    rng = np.random.RandomState(config.seed + 1)
    lengths = [len(s) for s in train_set]
    valid_pairs = [pair_from_gold(s) for s in valid_set]

    log: list[dict] = []
    best_snap = model.snapshot()
    best_epoch = 0
    best_loss = math.inf
    best_f1 = -math.inf
    bad_epochs = 0
    stopped_early = False
    diverged = False

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        loss_sum = 0.0
        counts = {"word_correct": 0, "word_total": 0,
                  "char_correct": 0, "char_total": 0}
        for batch in _make_batches(lengths, config.batch_size, rng):
            pairs = [pair_from_gold(train_set[i]) for i in batch]
            loss, stats = model.batch_loss(pairs)
            value = float(loss.data)
            if not math.isfinite(value):
                diverged = True
                break
            opt.zero_grad()
            backward(loss)
            opt.step()
            loss_sum += value * len(pairs)
            for key in counts:
                counts[key] += stats[key]
        if diverged:
            break

        train_loss = loss_sum / len(train_set)
        valid_loss = _corpus_loss(model, valid_pairs, config.batch_size)
        valid_f1 = _valid_f1(model, valid_set, config.eval_sentences)
        word_acc = _accuracy(counts["word_correct"], counts["word_total"])
        char_acc = _accuracy(counts["char_correct"], counts["char_total"])
        record = {
            "epoch": epoch,
            "train_loss": round(train_loss, 6),
            "valid_loss": round(valid_loss, 6),
            "valid_f1": round(valid_f1, 6),
            "train_word_acc": round(word_acc, 6),
            "train_char_acc": round(char_acc, 6),
            "seconds": round(time.perf_counter() - t0, 3),
        }
        log.append(record)
        if on_epoch:
            on_epoch(record)

        improved = False
        if valid_loss < best_loss - 1e-9:
            best_loss = valid_loss
            best_snap = model.snapshot()
            best_epoch = epoch
            improved = True
        if valid_f1 > best_f1 + 1e-9:
            best_f1 = valid_f1
            improved = True
        bad_epochs = 0 if improved else bad_epochs + 1

        target = config.target_train_accuracy
        if target is not None and word_acc >= target and char_acc >= target:
            # Memorization runs keep the final weights, not an earlier
            # low-validation snapshot.
            best_snap = model.snapshot()
            best_epoch = epoch
            stopped_early = True
            break
        if bad_epochs >= config.patience:
            stopped_early = True
            break

    model.restore(best_snap)
    return TrainResult(model, log, best_epoch, stopped_early, diverged)


def _corpus_loss(model, pairs: Sequence, batch_size: int) -> float:
    total = 0.0
    for start in range(0, len(pairs), batch_size):
        chunk = list(pairs[start:start + batch_size])
        loss, _ = model.batch_loss(chunk)
        total += float(loss.data) * len(chunk)
    return total / len(pairs)


def ingest_or_abort(lines: Iterable[str],
                    max_skip_fraction: float = 0.10) -> list[Sentence]:
    """Parse corpus lines; too many rejects means the data is wrong."""
    sentences, skipped = ingest_lines(lines)
    total = len(sentences) + skipped
    if total == 0:
        raise CorpusError("empty corpus")
    if skipped > max_skip_fraction * total:
        raise CorpusError(
            f"{skipped} of {total} lines rejected at ingestion; "
            f"above the {max_skip_fraction:.0%} threshold")
    return sentences


def distill_lines(teacher, lines: Iterable[str], mode: str = "best-path",
                  beam_size: int | None = None) -> Iterator[str]:
    """Truecase raw lines with a trained model, one at a time.

    Output lines are gold-cased synthetic training text for a student;
    blank lines stay blank so the stream stays aligned with its source.
    """
    for line in lines:
        sent = Sentence.from_line(line)
        if not sent.tokens:
            yield ""
            continue
        yield teacher.truecase(sent, mode=mode, beam_size=beam_size).text
