"""Case-noising experiment: how casing errors hurt a downstream n-gram LM.

A corpus is corrupted by lowercasing capitalized tokens at a given rate,
language models are fit on each variant, and all of them are scored on the
same untouched gold split. The interesting arm trains on the corrupted text
after a truecaser has repaired it; a good truecaser should land within a
hair of the model trained on clean text.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .textcore import CorpusError, Sentence, is_upper_char, lowercase_token

UNK = "<unk>"
EOS = "</s>"
BOS = "<s>"


@dataclass(frozen=True, slots=True)
class NoisifyConfig:
    rate: float
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError("rate must be in [0, 1]")


def _has_upper(token: str) -> bool:
    return any(is_upper_char(c) for c in token)


def noisify_sentences(sentences: Sequence[Sentence],
                      config: NoisifyConfig) -> list[Sentence]:
    """Lowercase each capitalized token independently at the given rate.

    Tokens with no uppercase characters never consume a random draw, so
    the same seed corrupts the same tokens regardless of what surrounds
    them.
    """
    rng = np.random.RandomState(config.seed)
    out: list[Sentence] = []
    for sent in sentences:
        tokens = []
        for tok in sent.tokens:
            if _has_upper(tok) and rng.random_sample() < config.rate:
                tokens.append(lowercase_token(tok))
            else:
                tokens.append(tok)
        out.append(Sentence(tuple(tokens)))
    return out


class NgramLm:
    """Interpolated trigram model with add-k smoothing and an unk bucket.

    Tokens below the count threshold fold into the unk symbol; every
    sentence contributes its tokens plus one end marker as prediction
    targets. Each order's add-k distribution is proper, and the fixed
    interpolation weights sum to one, so the mixture sums to one over
    the output space for any context.
    """

    def __init__(self, k: float = 0.1, min_count: int = 2,
                 lambdas: tuple[float, float, float] = (0.5, 0.3, 0.2)):
        if k <= 0:
            raise ValueError("k must be positive")
        if min_count < 1:
            raise ValueError("min_count must be >= 1")
        if len(lambdas) != 3 or abs(sum(lambdas) - 1.0) > 1e-12 or \
                any(w < 0 for w in lambdas):
            raise ValueError("lambdas must be three non-negative weights "
                             "summing to 1")
        self.k = k
        self.min_count = min_count
        self.lambdas = lambdas
        self._ids: dict[str, int] = {}
        self._n_symbols = 0
        self._vocab_size = 0  # output space: words + unk + eos
        self._uni: dict[int, int] = {}
        self._bi: dict[int, int] = {}
        self._tri: dict[int, int] = {}
        self._ctx1: dict[int, int] = {}
        self._ctx2: dict[int, int] = {}
        self._total = 0

    def fit(self, sentences: Sequence[Sentence]) -> "NgramLm":
        if not sentences:
            raise CorpusError("empty corpus")
        raw: dict[str, int] = {}
        for sent in sentences:
            for tok in sent.tokens:
                raw[tok] = raw.get(tok, 0) + 1
        kept = sorted(t for t, c in raw.items() if c >= self.min_count)
        self._ids = {UNK: 0, EOS: 1, BOS: 2}
        for tok in kept:
            self._ids[tok] = len(self._ids)
        self._n_symbols = len(self._ids)
        self._vocab_size = self._n_symbols - 1  # bos never gets predicted
        S = self._n_symbols
        bos = self._ids[BOS]
        for sent in sentences:
            c2, c1 = bos, bos
            for w in self._encode_targets(sent):
                self._uni[w] = self._uni.get(w, 0) + 1
                bi_key = c1 * S + w
                self._bi[bi_key] = self._bi.get(bi_key, 0) + 1
                self._ctx1[c1] = self._ctx1.get(c1, 0) + 1
                tri_key = (c2 * S + c1) * S + w
                self._tri[tri_key] = self._tri.get(tri_key, 0) + 1
                ctx_key = c2 * S + c1
                self._ctx2[ctx_key] = self._ctx2.get(ctx_key, 0) + 1
                self._total += 1
                c2, c1 = c1, w
        return self

    def _encode_targets(self, sent: Sentence) -> list[int]:
        unk = self._ids[UNK]
        ids = [self._ids.get(tok, unk) for tok in sent.tokens]
        ids.append(self._ids[EOS])
        return ids

    def _interp_prob(self, c2: int, c1: int, w: int) -> float:
        k, V = self.k, self._vocab_size
        S = self._n_symbols
        l3, l2, l1 = self.lambdas
        p1 = (self._uni.get(w, 0) + k) / (self._total + k * V)
        p2 = (self._bi.get(c1 * S + w, 0) + k) / \
             (self._ctx1.get(c1, 0) + k * V)
        p3 = (self._tri.get((c2 * S + c1) * S + w, 0) + k) / \
             (self._ctx2.get(c2 * S + c1, 0) + k * V)
        return l3 * p3 + l2 * p2 + l1 * p1

    def logprob(self, context: tuple[str, str], word: str) -> float:
        """Log probability of one word (or the end marker) in context."""
        if not self._ids:
            raise RuntimeError("model is not fitted")
        unk = self._ids[UNK]
        c2 = self._ids.get(context[0], unk)
        c1 = self._ids.get(context[1], unk)
        w = self._ids.get(word, unk)
        return math.log(self._interp_prob(c2, c1, w))

    def context_prob_sum(self, context: tuple[str, str]) -> float:
        """Total probability mass over the output space; one, up to rounding."""
        unk = self._ids[UNK]
        c2 = self._ids.get(context[0], unk)
        c1 = self._ids.get(context[1], unk)
        bos = self._ids[BOS]
        return sum(self._interp_prob(c2, c1, w)
                   for w in range(self._n_symbols) if w != bos)

    def evaluate(self, sentences: Sequence[Sentence]) -> dict:
        """Perplexity (end markers included) plus the unk rate on real tokens."""
        if not sentences:
            raise CorpusError("empty corpus")
        unk = self._ids[UNK]
        bos = self._ids[BOS]
        log_sum = 0.0
        targets = 0
        oov = 0
        tokens = 0
        for sent in sentences:
            c2, c1 = bos, bos
            encoded = self._encode_targets(sent)
            for i, w in enumerate(encoded):
                if i < len(sent.tokens):
                    tokens += 1
                    if w == unk:
                        oov += 1
                log_sum += math.log(self._interp_prob(c2, c1, w))
                targets += 1
                c2, c1 = c1, w
        return {
            "perplexity": math.exp(-log_sum / targets),
            "oov_rate": oov / tokens if tokens else 0.0,
            "token_count": tokens,
        }


def run_lm_experiment(
    sentences: Sequence[Sentence],
    truecaser,
    rates: Sequence[float] = (0.5, 0.25),
    seed: int = 0,
    eval_fraction: float = 0.1,
    baseline=None,
    k: float = 0.1,
    min_count: int = 2,
) -> dict:
    """Fit one LM per corpus arm and score them all on the gold eval split.

    Arms: one corrupted corpus per rate, the truecaser's repair of the
    most corrupted one, the untouched oracle, and optionally a lexicon
    baseline's repair for comparison.
    """
    if len(sentences) < 2:
        raise CorpusError("need at least 2 sentences")
    if not rates or any(not 0.0 <= r <= 1.0 for r in rates):
        raise ValueError("rates must be in [0, 1]")
    if not 0.0 < eval_fraction < 1.0:
        raise ValueError("eval_fraction must be in (0, 1)")
    rng = np.random.RandomState(seed)
    perm = rng.permutation(len(sentences))
    n_eval = min(max(1, int(round(len(sentences) * eval_fraction))),
                 len(sentences) - 1)
    eval_set = [sentences[i] for i in perm[:n_eval]]
    train_set = [sentences[i] for i in perm[n_eval:]]

    ordered_rates = sorted(rates, reverse=True)
    arms: dict[str, list[Sentence]] = {}
    most_corrupted: list[Sentence] | None = None
    for i, rate in enumerate(ordered_rates):
        corrupted = noisify_sentences(train_set,
                                      NoisifyConfig(rate, seed + 1 + i))
        arms[f"corrupt-{round(rate * 100):d}"] = corrupted
        if most_corrupted is None:
            most_corrupted = corrupted
    assert most_corrupted is not None
    arms["normalized"] = [truecaser.truecase(s) for s in most_corrupted]
    if baseline is not None:
        arms["lexicon-normalized"] = [baseline.truecase(s)
                                      for s in most_corrupted]
    arms["oracle"] = list(train_set)

    results: dict[str, dict] = {}
    for name, corpus in arms.items():
        lm = NgramLm(k=k, min_count=min_count).fit(corpus)
        results[name] = lm.evaluate(eval_set)

    return {
        "seed": seed,
        "rates": [float(r) for r in ordered_rates],
        "train_sentences": len(train_set),
        "eval_sentences": len(eval_set),
        "arms": results,
    }


def check_ordering(result: dict, oracle_tolerance: float = 0.02) -> list[str]:
    """Verify the expected perplexity ordering; returns a list of violations."""
    arms = result["arms"]
    problems: list[str] = []
    rates = result["rates"]
    ppl = {name: arms[name]["perplexity"] for name in arms}
    for hi, lo in zip(rates, rates[1:]):
        hi_name, lo_name = f"corrupt-{round(hi * 100):d}", \
            f"corrupt-{round(lo * 100):d}"
        if not ppl[hi_name] > ppl[lo_name]:
            problems.append(f"{hi_name} perplexity {ppl[hi_name]:.4f} not "
                            f"above {lo_name} {ppl[lo_name]:.4f}")
    lowest = f"corrupt-{round(rates[-1] * 100):d}"
    if not ppl[lowest] > ppl["normalized"]:
        problems.append(f"{lowest} perplexity {ppl[lowest]:.4f} not above "
                        f"normalized {ppl['normalized']:.4f}")
    oracle = ppl["oracle"]
    if abs(ppl["normalized"] - oracle) > oracle_tolerance * oracle:
        problems.append(
            f"normalized perplexity {ppl['normalized']:.4f} more than "
            f"{oracle_tolerance:.0%} away from oracle {oracle:.4f}")
    return problems
