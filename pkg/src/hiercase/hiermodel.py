"""Two-level hierarchical truecasing model.

A word-level tagger reads the whole lowercased sentence through hashed
character n-gram embeddings and a bidirectional GRU encoder, then a GRU
decoder labels every word SELF (copy verbatim) or OTHER (case must be
generated). Each OTHER word is handed to a character-level transducer:
its own bidirectional GRU over the word's characters plus a projected
word-context vector, decoded into UPPER/LOWER per character. Characters
with no invertible uppercase form are forced LOWER at probability one.

Decoder inputs combine by elementwise sum (forward state + backward
state + previous-label embedding, all the same width), which keeps the
parameter budget of the published presets. The embedding table is shared
between word n-grams and character unigrams. Both decoders are searched
with a small beam; ties prefer the lexicographically smaller label
sequence, so an untrained uniform model copies its input.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import modelio
from .autodiff import (
    Tensor,
    bag_sum,
    concat,
    gather_rows,
    log_softmax,
    narrow,
    softmax_xent,
)
from .features import FeatureConfig, char_bucket_id, token_bucket_ids
from .nnlayers import (
    Linear,
    QuantTensor,
    StackedGru,
    dequantize,
    init_uniform,
    quantize,
)
from .textcore import CharLabel, LabeledPair, Sentence, WordLabel, is_upcasable

ARCH_HIER = "hier"
START = 2  # decoder start symbol in the label embedding tables

NEG_INF = float("-inf")


@dataclass(frozen=True, slots=True)
class ModelConfig:
    input_embedding_dim: int = 128
    output_embedding_dim: int = 128
    encoder_layers_fwd: int = 1
    encoder_layers_bwd: int = 1
    decoder_layers: int = 1
    encoder_units: int = 128
    decoder_units: int = 128
    max_ngram_order: int = 3
    num_buckets: int = 5000
    beam_size: int = 2
    preset: str = "custom"
    max_words: int = 200

    def __post_init__(self) -> None:
        dims = {self.input_embedding_dim, self.output_embedding_dim,
                self.encoder_units, self.decoder_units}
        if len(dims) != 1:
            # Summed decoder inputs need one common width.
            raise ValueError("embedding, encoder, and decoder widths must match")
        for name in ("encoder_layers_fwd", "encoder_layers_bwd",
                     "decoder_layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.max_words < 1:
            raise ValueError("max_words must be >= 1")

    @property
    def dim(self) -> int:
        return self.input_embedding_dim

    def feature_config(self) -> FeatureConfig:
        return FeatureConfig(self.max_ngram_order, self.num_buckets)


TEACHER_CONFIG = ModelConfig(512, 512, 2, 2, 2, 512, 512, preset="teacher")
STUDENT_CONFIG = ModelConfig(128, 128, 1, 1, 1, 128, 128, preset="student")

PRESETS = {"teacher": TEACHER_CONFIG, "student": STUDENT_CONFIG}


def preset_config(name: str) -> ModelConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")


@dataclass(frozen=True, slots=True)
class Hypothesis:
    """One beam entry: a label sequence and its accumulated log probability."""

    labels: tuple[int, ...]
    score: float

    def __post_init__(self) -> None:
        if not (self.score <= 1e-6) or math.isnan(self.score):
            raise ValueError(f"hypothesis score must be a finite log prob, "
                             f"got {self.score}")


def beam_decode(dec: StackedGru, out: Linear, label_emb: np.ndarray,
                base: np.ndarray, forced: list[int | None],
                beam_size: int) -> list[Hypothesis]:
    """Left-to-right beam search over binary labels.

    base[t] is the label-independent decoder input at step t; the
    previous label's embedding row is added per hypothesis. Positions
    with forced[t] set take that label at probability one. Ties prefer
    the lexicographically smaller label sequence.
    """
    steps = base.shape[0]
    labels: list[tuple[int, ...]] = [()]
    scores = [0.0]
    states = dec.zero_state(1, base.dtype)
    prev = np.array([START])
    for t in range(steps):
        x = base[t][None, :] + label_emb[prev]
        new_states = dec.step(x, states, raw=True)
        cands: list[tuple[float, tuple[int, ...], int]] = []
        if forced[t] is None:
            lp = log_softmax(out(new_states[-1], raw=True), axis=-1)
            for k in range(len(labels)):
                for lab in (0, 1):
                    cands.append((scores[k] + float(lp[k, lab]),
                                  labels[k] + (lab,), k))
        else:
            lab = forced[t]
            for k in range(len(labels)):
                cands.append((scores[k], labels[k] + (lab,), k))
        cands.sort(key=lambda c: (-c[0], c[1]))
        cands = cands[:beam_size]
        labels = [c[1] for c in cands]
        scores = [c[0] for c in cands]
        sel = [c[2] for c in cands]
        states = [layer[sel] for layer in new_states]
        prev = np.array([seq[-1] for seq in labels])
    return [Hypothesis(seq, sc) for seq, sc in zip(labels, scores)]


class HierModel:
    arch = ARCH_HIER

    def __init__(self, config: ModelConfig, *, seed: int = 0,
                 dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.seed = seed
        rng = np.random.RandomState(seed)
        d = config.dim
        self.table = Tensor(init_uniform(rng, (config.num_buckets, d), dtype))
        self.w_enc_f = StackedGru("w_enc_f", d, d,
                                  config.encoder_layers_fwd, rng, dtype)
        self.w_enc_b = StackedGru("w_enc_b", d, d,
                                  config.encoder_layers_bwd, rng, dtype)
        self.w_dec = StackedGru("w_dec", d, d, config.decoder_layers, rng, dtype)
        self.w_label_emb = Tensor(init_uniform(rng, (3, d), dtype))
        self.w_out = Linear("w_out", d, 2, rng, dtype)
        self.c_enc_f = StackedGru("c_enc_f", d, d,
                                  config.encoder_layers_fwd, rng, dtype)
        self.c_enc_b = StackedGru("c_enc_b", d, d,
                                  config.encoder_layers_bwd, rng, dtype)
        self.c_dec = StackedGru("c_dec", d, d, config.decoder_layers, rng, dtype)
        self.ctx_proj = Linear("ctx_proj", 2 * d, d, rng, dtype)
        self.c_label_emb = Tensor(init_uniform(rng, (3, d), dtype))
        self.c_out = Linear("c_out", d, 2, rng, dtype)
        self._fcfg = config.feature_config()
        self._id_cache: dict[str, np.ndarray] = {}
        self._char_cache: dict[str, int] = {}

    # ---------------- parameters ----------------

    def named_params(self) -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = [("table", self.table)]
        out += self.w_enc_f.named_params()
        out += self.w_enc_b.named_params()
        out += self.w_dec.named_params()
        out.append(("w_label_emb", self.w_label_emb))
        out += self.w_out.named_params()
        out += self.c_enc_f.named_params()
        out += self.c_enc_b.named_params()
        out += self.c_dec.named_params()
        out += self.ctx_proj.named_params()
        out.append(("c_label_emb", self.c_label_emb))
        out += self.c_out.named_params()
        return out

    def params(self) -> list[Tensor]:
        return [t for _, t in self.named_params()]

    def param_count(self) -> int:
        return sum(t.data.size for t in self.params())

    def param_sizes(self) -> dict[str, int]:
        return {name: t.data.size for name, t in self.named_params()}

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_params()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for name, t in self.named_params():
            t.data[...] = snap[name]

    # ---------------- features ----------------

    def _word_ids(self, token: str) -> np.ndarray:
        ids = self._id_cache.get(token)
        if ids is None:
            ids = np.asarray(token_bucket_ids(token, self._fcfg), dtype=np.int64)
            if len(self._id_cache) < 500_000:
                self._id_cache[token] = ids
        return ids

    def _char_id(self, ch: str) -> int:
        cid = self._char_cache.get(ch)
        if cid is None:
            cid = char_bucket_id(ch, self._fcfg)
            self._char_cache[ch] = cid
        return cid

    def embed_word_np(self, token: str) -> np.ndarray:
        """Multiset sum of hashed n-gram embedding rows."""
        return self.table.data[self._word_ids(token)].sum(axis=0)

    # ---------------- inference (tape-free) ----------------

    def _encode_words_np(self, tokens: tuple[str, ...]):
        X = np.stack([self.embed_word_np(t) for t in tokens])
        fwd = self.w_enc_f.run_sequence_np(X, reverse=False)
        bwd = self.w_enc_b.run_sequence_np(X, reverse=True)
        return fwd, bwd

    def _encode_chars_np(self, token: str):
        ids = np.fromiter((self._char_id(c) for c in token), dtype=np.int64,
                          count=len(token))
        X = self.table.data[ids]
        fwd = self.c_enc_f.run_sequence_np(X, reverse=False)
        bwd = self.c_enc_b.run_sequence_np(X, reverse=True)
        return fwd, bwd

    def word_beam(self, tokens: tuple[str, ...],
                  beam_size: int | None = None) -> list[Hypothesis]:
        if not tokens:
            raise ValueError("empty sentence")
        fwd, bwd = self._encode_words_np(tokens)
        base = fwd + bwd
        forced: list[int | None] = [None] * len(tokens)
        return beam_decode(self.w_dec, self.w_out, self.w_label_emb.data,
                           base, forced, beam_size or self.config.beam_size)

    def _word_context_np(self, fwd_i: np.ndarray, bwd_i: np.ndarray) -> np.ndarray:
        return self.ctx_proj(np.concatenate([fwd_i, bwd_i]), raw=True)

    def char_beam(self, token: str, ctx: np.ndarray,
                  beam_size: int | None = None) -> list[Hypothesis]:
        if not token:
            raise ValueError("empty token")
        fwd, bwd = self._encode_chars_np(token)
        base = fwd + bwd + ctx[None, :]
        forced = [None if is_upcasable(c) else int(CharLabel.LOWER)
                  for c in token]
        return beam_decode(self.c_dec, self.c_out, self.c_label_emb.data,
                           base, forced, beam_size or self.config.beam_size)

    def _decode_chunk(self, tokens: tuple[str, ...], mode: str,
                      beam_size: int) -> tuple[str, ...]:
        fwd, bwd = self._encode_words_np(tokens)
        base = fwd + bwd
        word_hyps = beam_decode(self.w_dec, self.w_out, self.w_label_emb.data,
                                base, [None] * len(tokens), beam_size)
        char_top: dict[int, Hypothesis] = {}

        def chars_for(i: int) -> Hypothesis:
            hyp = char_top.get(i)
            if hyp is None:
                ctx = self._word_context_np(fwd[i], bwd[i])
                hyp = self.char_beam(tokens[i], ctx, beam_size)[0]
                char_top[i] = hyp
            return hyp

        def realize(word_hyp: Hypothesis) -> tuple[tuple[str, ...], float]:
            out: list[str] = []
            total = word_hyp.score
            for i, lab in enumerate(word_hyp.labels):
                if lab == WordLabel.SELF:
                    out.append(tokens[i])
                else:
                    ch = chars_for(i)
                    total += ch.score
                    out.append("".join(
                        _apply_char(c, cl) for c, cl in zip(tokens[i], ch.labels)))
            return tuple(out), total

        if mode == "best-path":
            return realize(word_hyps[0])[0]
        # full-beam: sum scores of word hypotheses that realize the same
        # output string, then take the best total.
        totals: dict[tuple[str, ...], float] = {}
        order: list[tuple[str, ...]] = []
        for hyp in word_hyps:
            out, total = realize(hyp)
            if out in totals:
                totals[out] = float(np.logaddexp(totals[out], total))
            else:
                totals[out] = total
                order.append(out)
        return max(order, key=lambda o: totals[o])

    def truecase(self, sentence: Sentence, mode: str = "best-path",
                 beam_size: int | None = None) -> Sentence:
        """Restore case. Input is lowercased first, so the output always
        lowercases back to the lowercase of the input."""
        if mode not in ("best-path", "full-beam"):
            raise ValueError(f"unknown decode mode {mode!r}")
        beam = beam_size or self.config.beam_size
        lowered = sentence.lowered()
        if not lowered.tokens:
            return lowered
        pieces: list[str] = []
        toks = lowered.tokens
        for start in range(0, len(toks), self.config.max_words):
            chunk = toks[start : start + self.config.max_words]
            pieces.extend(self._decode_chunk(chunk, mode, beam))
        return Sentence(tuple(pieces))

    def truecase_line(self, line: str, mode: str = "best-path",
                      beam_size: int | None = None) -> str:
        sent = Sentence.from_line(line)
        if not sent.tokens:
            return ""
        return self.truecase(sent, mode, beam_size).text

    # teacher-forced sequence scoring, used by tests and distillation checks

    def word_label_score(self, tokens: tuple[str, ...],
                         labels: tuple[int, ...]) -> float:
        fwd, bwd = self._encode_words_np(tokens)
        base = fwd + bwd
        states = self.w_dec.zero_state(1, base.dtype)
        prev = START
        total = 0.0
        for t, lab in enumerate(labels):
            x = base[t][None, :] + self.w_label_emb.data[prev]
            states = self.w_dec.step(x, states, raw=True)
            lp = log_softmax(self.w_out(states[-1], raw=True), axis=-1)
            total += float(lp[0, lab])
            prev = lab
        return total

    def char_label_score(self, token: str, ctx: np.ndarray,
                         labels: tuple[int, ...]) -> float:
        fwd, bwd = self._encode_chars_np(token)
        base = fwd + bwd + ctx[None, :]
        states = self.c_dec.zero_state(1, base.dtype)
        prev = START
        total = 0.0
        for t, lab in enumerate(labels):
            x = base[t][None, :] + self.c_label_emb.data[prev]
            states = self.c_dec.step(x, states, raw=True)
            if is_upcasable(token[t]):
                lp = log_softmax(self.c_out(states[-1], raw=True), axis=-1)
                total += float(lp[0, lab])
            elif lab != CharLabel.LOWER:
                return NEG_INF
            prev = lab
        return total

    def word_context(self, tokens: tuple[str, ...], i: int) -> np.ndarray:
        fwd, bwd = self._encode_words_np(tokens)
        return self._word_context_np(fwd[i], bwd[i])

    # ---------------- training forward (taped) ----------------

    def batch_loss(self, pairs: list[LabeledPair]):
        """Summed word and char cross entropy, averaged over sentences.

        Returns (scalar loss Tensor, stats dict with teacher-forced label
        accuracies). Batches are padded to the longest sentence; padded
        slots carry zero weight and frozen recurrent state.
        """
        if not pairs:
            raise ValueError("empty batch")
        B = len(pairs)
        T = max(len(p.lower) for p in pairs)
        d = self.config.dim
        dt = self.dtype
        inv_b = 1.0 / B

        # --- word embeddings for every real token, time-major layout ---
        flat_ids: list[np.ndarray] = []
        offsets = [0]
        slot_of = np.full(T * B, -1, dtype=np.int64)
        n_real = 0
        for b, p in enumerate(pairs):
            for t, tok in enumerate(p.lower.tokens):
                ids = self._word_ids(tok)
                flat_ids.append(ids)
                offsets.append(offsets[-1] + len(ids))
                slot_of[t * B + b] = n_real
                n_real += 1
        emb_real = bag_sum(self.table, np.concatenate(flat_ids),
                           np.asarray(offsets))
        # pads point at an appended zero row
        emb_ext = concat([emb_real, np.zeros((1, d), dtype=dt)], axis=0)
        slot_of[slot_of < 0] = n_real
        X = gather_rows(emb_ext, slot_of)  # (T*B, d)

        lengths = np.array([len(p.lower) for p in pairs])
        masks = [(lengths > t).astype(dt)[:, None] for t in range(T)]

        def run_encoder(stack: StackedGru, xs: list, order) -> list:
            states = [Tensor(np.zeros((B, d), dtype=dt))
                      for _ in range(stack.num_layers)]
            tops: dict[int, object] = {}
            for t in order:
                new = stack.step(xs[t], states)
                states = [masks[t] * ns + (1.0 - masks[t]) * os
                          for ns, os in zip(new, states)]
                tops[t] = states[-1]
            return [tops[t] for t in range(T)]

        xs = [narrow(X, 0, t * B, B) for t in range(T)]
        fwd_tops = run_encoder(self.w_enc_f, xs, range(T))
        bwd_tops = run_encoder(self.w_enc_b, xs, range(T - 1, -1, -1))

        # --- word decoder, teacher forced ---
        word_targets = np.zeros(T * B, dtype=np.int64)
        word_weights = np.zeros(T * B, dtype=dt)
        prev_ids = np.full((T, B), START, dtype=np.int64)
        for b, p in enumerate(pairs):
            for t, lab in enumerate(p.word_labels):
                word_targets[t * B + b] = int(lab)
                word_weights[t * B + b] = inv_b
                if t + 1 < T:
                    prev_ids[t + 1, b] = int(lab)
        dec_states = [Tensor(np.zeros((B, d), dtype=dt))
                      for _ in range(self.w_dec.num_layers)]
        dec_tops = []
        for t in range(T):
            u = fwd_tops[t] + bwd_tops[t] + gather_rows(self.w_label_emb,
                                                        prev_ids[t])
            new = self.w_dec.step(u, dec_states)
            dec_states = [masks[t] * ns + (1.0 - masks[t]) * os
                          for ns, os in zip(new, dec_states)]
            dec_tops.append(dec_states[-1])
        word_logits = self.w_out(concat(dec_tops, axis=0))
        word_loss = softmax_xent(word_logits, word_targets, word_weights)

        real = word_weights > 0
        word_pred = word_logits.data.argmax(axis=1)
        stats = {
            "word_correct": int((word_pred[real] == word_targets[real]).sum()),
            "word_total": int(real.sum()),
            "char_correct": 0,
            "char_total": 0,
        }

        # --- char transducer over gold-OTHER words ---
        items = []  # (b, word index, token, char labels)
        for b, p in enumerate(pairs):
            for i, lab in enumerate(p.word_labels):
                if lab == WordLabel.OTHER:
                    items.append((b, i, p.lower.tokens[i], p.char_labels[i]))
        if not items:
            zero = Tensor(np.zeros((), dtype=dt))
            return word_loss + zero, stats

        M = len(items)
        C = max(len(tok) for _, _, tok, _ in items)
        char_slot_ids = np.zeros((C, M), dtype=np.int64)
        char_mask = np.zeros((C, M), dtype=dt)
        char_targets = np.zeros(C * M, dtype=np.int64)
        char_weights = np.zeros(C * M, dtype=dt)
        cprev = np.full((C, M), START, dtype=np.int64)
        for m, (_b, _i, tok, labs) in enumerate(items):
            for j, ch in enumerate(tok):
                char_slot_ids[j, m] = self._char_id(ch)
                char_mask[j, m] = 1.0
                lab = int(labs[j])
                char_targets[j * M + m] = lab
                if is_upcasable(ch):
                    char_weights[j * M + m] = inv_b
                if j + 1 < C:
                    cprev[j + 1, m] = lab

        char_emb = gather_rows(self.table, char_slot_ids.reshape(-1))
        cxs = [narrow(char_emb, 0, j * M, M) for j in range(C)]
        cmasks = [char_mask[j][:, None] for j in range(C)]

        def run_char_encoder(stack: StackedGru, order) -> list:
            states = [Tensor(np.zeros((M, d), dtype=dt))
                      for _ in range(stack.num_layers)]
            tops: dict[int, object] = {}
            for j in order:
                new = stack.step(cxs[j], states)
                states = [cmasks[j] * ns + (1.0 - cmasks[j]) * os
                          for ns, os in zip(new, states)]
                tops[j] = states[-1]
            return [tops[j] for j in range(C)]

        cf_tops = run_char_encoder(self.c_enc_f, range(C))
        cb_tops = run_char_encoder(self.c_enc_b, range(C - 1, -1, -1))

        # word context rows for each item, out of the taped encoder states
        wf_all = concat(fwd_tops, axis=0)   # (T*B, d)
        wb_all = concat(bwd_tops, axis=0)
        pos = np.array([i * B + b for b, i, _, _ in items], dtype=np.int64)
        ctx = self.ctx_proj(concat([gather_rows(wf_all, pos),
                                    gather_rows(wb_all, pos)], axis=1))

        cdec_states = [Tensor(np.zeros((M, d), dtype=dt))
                       for _ in range(self.c_dec.num_layers)]
        cdec_tops = []
        for j in range(C):
            u = cf_tops[j] + cb_tops[j] + ctx + gather_rows(self.c_label_emb,
                                                            cprev[j])
            new = self.c_dec.step(u, cdec_states)
            cdec_states = [cmasks[j] * ns + (1.0 - cmasks[j]) * os
                           for ns, os in zip(new, cdec_states)]
            cdec_tops.append(cdec_states[-1])
        char_logits = self.c_out(concat(cdec_tops, axis=0))
        char_loss = softmax_xent(char_logits, char_targets, char_weights)

        creal = char_weights > 0
        char_pred = char_logits.data.argmax(axis=1)
        stats["char_correct"] = int(
            (char_pred[creal] == char_targets[creal]).sum())
        stats["char_total"] = int(creal.sum())

        return word_loss + char_loss, stats

    def sentence_loss(self, pair: LabeledPair) -> float:
        loss, _ = self.batch_loss([pair])
        value = float(loss.data)
        if not math.isfinite(value) or value < 0:
            raise ValueError(f"bad sentence loss {value}")
        return value

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
        data = self.to_bytes(quantized=quantized, extra=extra)
        with open(path, "wb") as fh:
            fh.write(data)

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
                   scales: dict[str, float]) -> "HierModel":
        cfg = ModelConfig(**manifest["config"])
        model = cls(cfg, seed=int(manifest.get("seed", 0)),
                    dtype=np.dtype(manifest.get("dtype", "float32")))
        assign_params(model, arrays, scales)
        model._id_cache.clear()
        return model

    @classmethod
    def load(cls, path: str) -> "HierModel":
        manifest, arrays, scales = modelio.read_model(path)
        if manifest.get("arch") != ARCH_HIER:
            raise modelio.ModelFormatError(
                f"not a hierarchical model: arch={manifest.get('arch')!r}")
        return cls.from_parts(manifest, arrays, scales)

    def quantized_copy(self) -> "HierModel":
        """Round weights through int8 and back; same architecture."""
        manifest, arrays, scales = modelio.parse_model(
            self.to_bytes(quantized=True))
        return type(self).from_parts(manifest, arrays, scales)


def assign_params(model, arrays: dict[str, np.ndarray],
                  scales: dict[str, float]) -> None:
    """Load stored tensors into a freshly built model, dequantizing as needed."""
    for name, t in model.named_params():
        if name not in arrays:
            raise modelio.ModelFormatError(f"missing tensor {name!r}")
        arr = arrays[name]
        if name in scales:
            arr = dequantize(QuantTensor(arr, scales[name]), dtype=model.dtype)
        if arr.shape != t.data.shape:
            raise modelio.ModelFormatError(
                f"tensor {name!r} has shape {arr.shape}, "
                f"expected {t.data.shape}")
        t.data = arr.astype(model.dtype, copy=False)


def _apply_char(c: str, label: int) -> str:
    from .textcore import upper_char

    if label == CharLabel.UPPER and is_upcasable(c):
        return upper_char(c)
    return c
