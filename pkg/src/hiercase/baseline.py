"""Most-frequent-form lexicon capitalizer.

For every lowercase key the training corpus votes on a single cased form.
Sentence-initial tokens are counted in a separate table so that ordinary
words capitalized only at sentence starts do not get poisoned counts: the
winning form is chosen from non-initial occurrences, with the initial
table used as a fallback for words never seen mid-sentence. The stored
count folds in initial occurrences of the winning form. Ties prefer the
lexicographically smallest form. Unseen tokens are copied through, which
is what makes this baseline precision-heavy and recall-poor.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable

from .textcore import CorpusError, Sentence, lowercase_token


@dataclass(frozen=True, slots=True)
class CaseLexicon:
    """Immutable key -> (form, count) table; forms lowercase to their key."""

    entries: dict[str, tuple[str, int]]
    total_tokens: int

    def __post_init__(self) -> None:
        for key, (form, count) in self.entries.items():
            if lowercase_token(form) != key:
                raise ValueError(f"form {form!r} does not lowercase to {key!r}")
            if count <= 0:
                raise ValueError(f"non-positive count for {key!r}")

    def lookup(self, token: str) -> str:
        entry = self.entries.get(lowercase_token(token))
        return entry[0] if entry else token

    def truecase(self, sentence: Sentence) -> Sentence:
        lowered = sentence.lowered()
        return Sentence(tuple(self.lookup(t) for t in lowered.tokens))

    def truecase_line(self, line: str, mode: str = "best-path",
                      beam_size: int | None = None) -> str:
        sent = Sentence.from_line(line)
        if not sent.tokens:
            return ""
        return self.truecase(sent).text

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", errors="surrogateescape") as fh:
            for key in sorted(self.entries):
                form, count = self.entries[key]
                fh.write(f"{key}\t{form}\t{count}\n")

    @classmethod
    def load(cls, path: str) -> "CaseLexicon":
        entries: dict[str, tuple[str, int]] = {}
        total = 0
        with open(path, "r", encoding="utf-8", errors="surrogateescape") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise CorpusError(f"{path}:{lineno}: expected 3 columns")
                key, form, count_s = parts
                try:
                    count = int(count_s)
                except ValueError:
                    raise CorpusError(f"{path}:{lineno}: bad count {count_s!r}")
                entries[key] = (form, count)
                total += count
        return cls(entries, total)


def _best_form(counter: Counter) -> tuple[str, int]:
    top = max(counter.values())
    form = min(f for f, c in counter.items() if c == top)
    return form, top


def build_lexicon(sentences: Iterable[Sentence]) -> CaseLexicon:
    general: dict[str, Counter] = {}
    initial: dict[str, Counter] = {}
    total = 0
    for sent in sentences:
        for pos, tok in enumerate(sent.tokens):
            key = lowercase_token(tok)
            table = initial if pos == 0 else general
            table.setdefault(key, Counter())[tok] += 1
            total += 1
    if total == 0:
        raise CorpusError("empty corpus")
    entries: dict[str, tuple[str, int]] = {}
    for key in general.keys() | initial.keys():
        if key in general:
            form, count = _best_form(general[key])
            count += initial.get(key, Counter()).get(form, 0)
        else:
            form, count = _best_form(initial[key])
        entries[key] = (form, count)
    return CaseLexicon(entries, total)


def baseline_truecase(lexicon: CaseLexicon, sentence: Sentence) -> Sentence:
    return lexicon.truecase(sentence)
