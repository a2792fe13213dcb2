"""Evaluation metrics, speed benchmarking, and the pure char-level reference.

Evaluation scores non-lowercase decisions: a prediction counts only when the
emitted token is not fully lowercase and matches the reference exactly at the
same position. Benchmarks run batch size 1 on a single BLAS thread and report
the median of repeated timed passes, verifying that outputs do not drift
between runs.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import modelio
from .autodiff import (
    Tensor,
    concat,
    gather_rows,
    narrow,
    softmax_xent,
)
from .features import char_bucket_id
from .hiermodel import (
    START,
    ModelConfig,
    assign_params,
    beam_decode,
    preset_config,
)
from .nnlayers import Linear, StackedGru, init_uniform, quantize
from .textcore import (
    CharLabel,
    CorpusError,
    LabeledPair,
    Sentence,
    classify_word,
    is_upcasable,
    lowercase_token,
    upper_char,
)

ARCH_CHAR = "charrnn"


class AlignmentError(CorpusError):
    """Prediction and reference corpora do not line up token for token."""


def _is_nl(token: str) -> bool:
    return token != lowercase_token(token)


@dataclass(slots=True)
class ClassStats:
    count: int = 0
    matches: int = 0

    @property
    def accuracy(self) -> float:
        return self.matches / self.count if self.count else 0.0


@dataclass(slots=True)
class EvalReport:
    tokens: int = 0
    token_matches: int = 0
    nl_predictions: int = 0
    nl_references: int = 0
    nl_matches: int = 0
    hard_errors: int = 0
    per_class: dict[str, ClassStats] = field(default_factory=dict)

    @property
    def precision(self) -> float:
        return self.nl_matches / self.nl_predictions if self.nl_predictions else 0.0

    @property
    def recall(self) -> float:
        return self.nl_matches / self.nl_references if self.nl_references else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2.0 * p * r / (p + r) if p > 0.0 and r > 0.0 else 0.0

    @property
    def token_accuracy(self) -> float:
        return self.token_matches / self.tokens if self.tokens else 0.0

    def to_dict(self) -> dict:
        return {
            "tokens": self.tokens,
            "token_accuracy": self.token_accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "nl_predictions": self.nl_predictions,
            "nl_references": self.nl_references,
            "nl_matches": self.nl_matches,
            "hard_errors": self.hard_errors,
            "per_class": {
                name: {"count": s.count, "matches": s.matches,
                       "accuracy": s.accuracy}
                for name, s in sorted(self.per_class.items())
            },
        }


def eval_nl(predictions: Sequence[Sentence],
            references: Sequence[Sentence]) -> EvalReport:
    """Positional exact-match casing metrics over aligned sentence lists."""
    if len(predictions) != len(references):
        raise AlignmentError(
            f"{len(predictions)} predictions vs {len(references)} references")
    report = EvalReport()
    for idx, (pred, ref) in enumerate(zip(predictions, references)):
        if len(pred) != len(ref):
            raise AlignmentError(
                f"sentence {idx}: {len(pred)} tokens predicted, "
                f"{len(ref)} expected")
        for p_tok, r_tok in zip(pred.tokens, ref.tokens):
            report.tokens += 1
            cls = report.per_class.setdefault(classify_word(r_tok).value,
                                              ClassStats())
            cls.count += 1
            if lowercase_token(p_tok) != lowercase_token(r_tok):
                # Not a casing disagreement: the token text itself changed.
                report.hard_errors += 1
            match = p_tok == r_tok
            if match:
                report.token_matches += 1
                cls.matches += 1
            if _is_nl(p_tok):
                report.nl_predictions += 1
                if match:
                    report.nl_matches += 1
            if _is_nl(r_tok):
                report.nl_references += 1
    return report


def eval_lines(pred_lines: Iterable[str], ref_lines: Iterable[str]) -> EvalReport:
    preds = [Sentence.from_line(ln) for ln in pred_lines]
    refs = [Sentence.from_line(ln) for ln in ref_lines]
    preds = [s for s in preds if s.tokens]
    refs = [s for s in refs if s.tokens]
    return eval_nl(preds, refs)


# ---------------- speed benchmark ----------------


@dataclass(slots=True)
class BenchEntry:
    name: str
    tokens: int
    run_tps: list[float]
    median_tps: float
    relative_speed: float
    param_count: int | None
    float_bytes: int | None
    quant_bytes: int | None
    precision: float | None = None
    recall: float | None = None
    f1: float | None = None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "tokens": self.tokens,
            "run_tokens_per_second": self.run_tps,
            "tokens_per_second": self.median_tps,
            "relative_speed": self.relative_speed,
            "param_count": self.param_count,
            "float_bytes": self.float_bytes,
            "quant_bytes": self.quant_bytes,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }


@dataclass(slots=True)
class BenchReport:
    reference: str
    entries: list[BenchEntry]

    def to_dict(self) -> dict:
        return {"reference": self.reference,
                "entries": [e.to_dict() for e in self.entries]}

    def to_tsv(self) -> str:
        # Row layout follows the usual comparison-table column order.
        lines = ["system\tprecision\trecall\tf1\trelative_speed\tparams"]
        for e in self.entries:
            def fmt(x: float | None) -> str:
                return "" if x is None else f"{x:.4f}"
            params = "" if e.param_count is None else str(e.param_count)
            lines.append(
                f"{e.name}\t{fmt(e.precision)}\t{fmt(e.recall)}\t{fmt(e.f1)}"
                f"\t{e.relative_speed:.3f}\t{params}")
        return "\n".join(lines) + "\n"


def _system_sizes(system: object) -> tuple[int | None, int | None, int | None]:
    count = getattr(system, "param_count", None)
    to_bytes = getattr(system, "to_bytes", None)
    if count is None or to_bytes is None:
        return None, None, None
    return count(), len(to_bytes(quantized=False)), len(to_bytes(quantized=True))


def bench_speed(
    systems: Sequence[tuple[str, object]],
    sentences: Sequence[Sentence],
    runs: int = 5,
    warmup: int = 1,
    reference: str | None = None,
    evaluate: bool = True,
) -> BenchReport:
    """Time truecasing throughput, one sentence at a time, single threaded.

    Each system lowers the provided gold sentences itself; when `evaluate`
    is set the outputs are also scored against the gold casing so one
    report carries both speed and quality columns.
    """
    if not systems:
        raise ValueError("no systems to benchmark")
    if not sentences:
        raise CorpusError("empty benchmark corpus")
    if runs < 1 or warmup < 0:
        raise ValueError("runs must be >= 1 and warmup >= 0")
    names = [name for name, _ in systems]
    if len(set(names)) != len(names):
        raise ValueError("duplicate system names")
    ref_name = reference if reference is not None else names[0]
    if ref_name not in names:
        raise ValueError(f"unknown reference system {ref_name!r}")

    total_tokens = sum(len(s) for s in sentences)
    entries: list[BenchEntry] = []
    with threadpool_limits(limits=1):
        for name, system in systems:
            for _ in range(warmup):
                for sent in sentences:
                    system.truecase(sent)
            first_out: list[Sentence] | None = None
            tps: list[float] = []
            for _ in range(runs):
                out: list[Sentence] = []
                start = time.perf_counter()
                for sent in sentences:
                    out.append(system.truecase(sent))
                elapsed = time.perf_counter() - start
                tps.append(total_tokens / elapsed)
                if first_out is None:
                    first_out = out
                elif out != first_out:
                    raise RuntimeError(
                        f"system {name!r} output drifted between runs")
            count, fbytes, qbytes = _system_sizes(system)
            entry = BenchEntry(name, total_tokens, tps, statistics.median(tps),
                               0.0, count, fbytes, qbytes)
            if evaluate and first_out is not None:
                rep = eval_nl(first_out, list(sentences))
                entry.precision = rep.precision
                entry.recall = rep.recall
                entry.f1 = rep.f1
            entries.append(entry)
    ref_tps = next(e.median_tps for e in entries if e.name == ref_name)
    for e in entries:
        e.relative_speed = e.median_tps / ref_tps
    return BenchReport(ref_name, entries)


# ---------------- pure char-level reference tagger ----------------


class CharRnnModel:
    """Flat per-character U/L tagger with no word-level stage.

    The whole line, spaces included, runs through one bidirectional encoder
    and a label-fed decoder at the same widths as the hierarchical model's
    components. Characters that cannot be upcased are forced lowercase, so
    spaces survive and token boundaries are preserved.
    """

    arch = ARCH_CHAR

    def __init__(self, config: ModelConfig, *, seed: int = 0,
                 dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.seed = seed
        rng = np.random.RandomState(seed)
        d = config.dim
        self.table = Tensor(init_uniform(rng, (config.num_buckets, d), dtype))
        self.enc_f = StackedGru("enc_f", d, d, config.encoder_layers_fwd,
                                rng, dtype)
        self.enc_b = StackedGru("enc_b", d, d, config.encoder_layers_bwd,
                                rng, dtype)
        self.dec = StackedGru("dec", d, d, config.decoder_layers, rng, dtype)
        self.label_emb = Tensor(init_uniform(rng, (3, d), dtype))
        self.out = Linear("out", d, 2, rng, dtype)
        self._fcfg = config.feature_config()
        self._char_cache: dict[str, int] = {}

    def named_params(self) -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = [("table", self.table)]
        out += self.enc_f.named_params()
        out += self.enc_b.named_params()
        out += self.dec.named_params()
        out.append(("label_emb", self.label_emb))
        out += self.out.named_params()
        return out

    def params(self) -> list[Tensor]:
        return [t for _, t in self.named_params()]

    def param_count(self) -> int:
        return sum(t.data.size for t in self.params())

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_params()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for name, t in self.named_params():
            t.data[...] = snap[name]

    def _char_id(self, ch: str) -> int:
        cid = self._char_cache.get(ch)
        if cid is None:
            cid = char_bucket_id(ch, self._fcfg)
            self._char_cache[ch] = cid
        return cid

    def _char_ids(self, chars: str) -> np.ndarray:
        return np.fromiter((self._char_id(c) for c in chars), dtype=np.int64,
                           count=len(chars))

    def _encode_np(self, chars: str) -> np.ndarray:
        X = self.table.data[self._char_ids(chars)]
        fwd = self.enc_f.run_sequence_np(X, reverse=False)
        bwd = self.enc_b.run_sequence_np(X, reverse=True)
        return fwd + bwd

    def truecase(self, sentence: Sentence, mode: str = "best-path",
                 beam_size: int | None = None) -> Sentence:
        if mode not in ("best-path", "full-beam"):
            raise ValueError(f"unknown decode mode {mode!r}")
        if not sentence.tokens:
            return sentence
        beam = beam_size or self.config.beam_size
        chars = sentence.lowered().text
        base = self._encode_np(chars)
        forced = [None if is_upcasable(c) else int(CharLabel.LOWER)
                  for c in chars]
        hyps = beam_decode(self.dec, self.out, self.label_emb.data,
                           base, forced, beam)
        if mode == "full-beam":
            totals: dict[str, float] = {}
            order: list[str] = []
            for hyp in hyps:
                text = _apply_labels_to_chars(chars, hyp.labels)
                if text in totals:
                    totals[text] = float(np.logaddexp(totals[text], hyp.score))
                else:
                    totals[text] = hyp.score
                    order.append(text)
            best = max(order, key=lambda t: totals[t])
        else:
            best = _apply_labels_to_chars(chars, hyps[0].labels)
        return Sentence(tuple(best.split(" ")))

    def truecase_line(self, line: str, mode: str = "best-path",
                      beam_size: int | None = None) -> str:
        sent = Sentence.from_line(line)
        if not sent.tokens:
            return ""
        return self.truecase(sent, mode=mode, beam_size=beam_size).text

    def batch_loss(self, pairs: Sequence[LabeledPair]):
        """Teacher-forced tagging loss over a batch of full lines.

        Matches the hierarchical model's batch protocol: per-position
        weight 1/B, zero weight on characters that cannot carry case,
        padded slots frozen.
        """
        if not pairs:
            raise ValueError("empty batch")
        B = len(pairs)
        d = self.config.dim
        dt = self.dtype
        inv_b = 1.0 / B
        lines = [p.lower.text for p in pairs]
        golds = [p.gold.text for p in pairs]
        lengths = np.array([len(ln) for ln in lines])
        T = int(lengths.max())

        n_ext = self.config.num_buckets  # one-past-end row holds zeros
        ids = np.full(T * B, n_ext, dtype=np.int64)
        targets = np.zeros(T * B, dtype=np.int64)
        weights = np.zeros(T * B, dtype=dt)
        prev_ids = np.full((T, B), START, dtype=np.int64)
        for b, (line, gold) in enumerate(zip(lines, golds)):
            cids = self._char_ids(line)
            for t, (lc, gc) in enumerate(zip(line, gold)):
                slot = t * B + b
                ids[slot] = cids[t]
                lab = int(CharLabel.UPPER if gc != lc else CharLabel.LOWER)
                targets[slot] = lab
                if is_upcasable(lc):
                    weights[slot] = inv_b
                if t + 1 < T:
                    prev_ids[t + 1, b] = lab

        emb_ext = concat([self.table, np.zeros((1, d), dtype=dt)], axis=0)
        X = gather_rows(emb_ext, ids)
        xs = [narrow(X, 0, t * B, B) for t in range(T)]
        masks = [(lengths > t).astype(dt)[:, None] for t in range(T)]

        def run_encoder(stack: StackedGru, order) -> list:
            states = [Tensor(np.zeros((B, d), dtype=dt))
                      for _ in range(stack.num_layers)]
            tops: dict[int, object] = {}
            for t in order:
                new = stack.step(xs[t], states)
                states = [masks[t] * ns + (1.0 - masks[t]) * os
                          for ns, os in zip(new, states)]
                tops[t] = states[-1]
            return [tops[t] for t in range(T)]

        fwd_tops = run_encoder(self.enc_f, range(T))
        bwd_tops = run_encoder(self.enc_b, range(T - 1, -1, -1))

        dec_states = [Tensor(np.zeros((B, d), dtype=dt))
                      for _ in range(self.dec.num_layers)]
        dec_tops = []
        for t in range(T):
            u = fwd_tops[t] + bwd_tops[t] + gather_rows(self.label_emb,
                                                        prev_ids[t])
            new = self.dec.step(u, dec_states)
            dec_states = [masks[t] * ns + (1.0 - masks[t]) * os
                          for ns, os in zip(new, dec_states)]
            dec_tops.append(dec_states[-1])
        logits = self.out(concat(dec_tops, axis=0))
        loss = softmax_xent(logits, targets, weights)

        live = weights > 0
        pred = logits.data.argmax(axis=1)
        stats = {
            "word_correct": 0,
            "word_total": 0,
            "char_correct": int((pred[live] == targets[live]).sum()),
            "char_total": int(live.sum()),
        }
        return loss, stats

    # ---------------- persistence ----------------

    def manifest(self, extra: dict | None = None) -> dict:
        head = {
            "arch": self.arch,
            "config": asdict(self.config),
            "dtype": str(self.dtype),
            "quantized": False,
            "param_count": self.param_count(),
        }
        if extra:
            head.update(extra)
        return head

    def save(self, path: str, *, quantized: bool = False,
             extra: dict | None = None) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes(quantized=quantized, extra=extra))

    def to_bytes(self, *, quantized: bool = False,
                 extra: dict | None = None) -> bytes:
        head = self.manifest(extra)
        head["quantized"] = quantized
        tensors: list[tuple[str, np.ndarray, float | None]] = []
        for name, t in self.named_params():
            if quantized:
                qt = quantize(t.data)
                tensors.append((name, qt.q, qt.scale))
            else:
                tensors.append((name, t.data, None))
        return modelio.serialize_model(head, tensors)

    @classmethod
    def from_parts(cls, manifest: dict, arrays: dict[str, np.ndarray],
                   scales: dict[str, float]) -> "CharRnnModel":
        cfg = ModelConfig(**manifest["config"])
        model = cls(cfg, seed=int(manifest.get("seed", 0)),
                    dtype=np.dtype(manifest.get("dtype", "float32")))
        assign_params(model, arrays, scales)
        return model

    @classmethod
    def load(cls, path: str) -> "CharRnnModel":
        manifest, arrays, scales = modelio.read_model(path)
        if manifest.get("arch") != ARCH_CHAR:
            raise modelio.ModelFormatError(
                f"not a char tagger model: arch={manifest.get('arch')!r}")
        return cls.from_parts(manifest, arrays, scales)


def _apply_labels_to_chars(chars: str, labels: Sequence[int]) -> str:
    out = []
    for c, lab in zip(chars, labels):
        if lab == int(CharLabel.UPPER) and is_upcasable(c):
            out.append(upper_char(c))
        else:
            out.append(c)
    return "".join(out)


def build_char_reference(preset: str = "student", seed: int = 0,
                         dtype=np.float32) -> CharRnnModel:
    return CharRnnModel(preset_config(preset), seed=seed, dtype=dtype)
