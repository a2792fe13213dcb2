"""Case-aware text primitives.

Tokens, sentences, case labels, and the transforms between cased and
lowercased text. Everything downstream (features, models, evaluation)
builds on the guarantees made here, the central one being that applying
derived labels to a lowercased sentence reproduces the original exactly,
and lowercasing any model output reproduces the input exactly.

Case mapping: Python's str.upper()/str.lower() occasionally expand one
character into several ("ß".upper() == "SS"). We need a bijection on
single characters, so the per-character maps fall back to identity
whenever the standard mapping changes the length, and an uppercase label
is only ever applied when the round trip is exact (upper then lower gives
back the same character). Characters outside that set are treated as
caseless and always keep their label LOWER.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Iterator


class CorpusError(ValueError):
    """Base class for malformed text or label structures."""


class EmptyTokenError(CorpusError):
    pass


class TokenCountMismatch(CorpusError):
    pass


class LengthMismatch(CorpusError):
    pass


class NotCaseVariant(CorpusError):
    """Two tokens differ by something other than character case."""


class WordLabel(enum.IntEnum):
    SELF = 0
    OTHER = 1


class CharLabel(enum.IntEnum):
    LOWER = 0
    UPPER = 1


class WordClass(enum.Enum):
    LC = "LC"  # all lowercase
    UC = "UC"  # first char uppercase, rest lowercase
    CA = "CA"  # all cased chars uppercase
    MC = "MC"  # anything else (iPhone, McDonald's, ...)


def lower_char(c: str) -> str:
    """Single-character lowercase; identity when the mapping would expand."""
    low = c.lower()
    return low if len(low) == 1 else c


def upper_char(c: str) -> str:
    """Single-character uppercase; identity when the mapping would expand."""
    up = c.upper()
    return up if len(up) == 1 else c


def is_upper_char(c: str) -> bool:
    """True when the character changes under the single-char lowercase map."""
    return lower_char(c) != c


def is_upcasable(c: str) -> bool:
    """True when c has a distinct single-char uppercase form that lowers back to c."""
    up = upper_char(c)
    return up != c and lower_char(up) == c


def lowercase_token(token: str) -> str:
    return "".join(lower_char(c) for c in token)


@dataclass(frozen=True, slots=True)
class Sentence:
    """A tokenized sentence. Tokens are non-empty and contain no whitespace."""

    tokens: tuple[str, ...]

    def __post_init__(self) -> None:
        for tok in self.tokens:
            if not tok:
                raise EmptyTokenError("empty token in sentence")
            if any(ch.isspace() for ch in tok):
                raise CorpusError(f"token contains whitespace: {tok!r}")

    @classmethod
    def from_line(cls, line: str) -> "Sentence":
        return cls(tuple(line.split()))

    @property
    def text(self) -> str:
        return " ".join(self.tokens)

    def lowered(self) -> "Sentence":
        return Sentence(tuple(lowercase_token(t) for t in self.tokens))

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self) -> Iterator[str]:
        return iter(self.tokens)


# Char labels are stored per word; SELF words carry None since their
# characters are copied verbatim and never scored.
CharLabels = tuple[CharLabel, ...]
WordLabels = tuple[WordLabel, ...]


@dataclass(frozen=True, slots=True)
class LabeledPair:
    """A lowercased sentence, its gold casing, and the labels linking them."""

    lower: Sentence
    gold: Sentence
    word_labels: WordLabels
    char_labels: tuple[CharLabels | None, ...]


def derive_labels(
    lower: Sentence, gold: Sentence
) -> tuple[WordLabels, tuple[CharLabels | None, ...]]:
    """Compute word and character labels turning `lower` into `gold`.

    A word is SELF when gold equals the lowercase form, OTHER when at least
    one character must be uppercased. Raises TokenCountMismatch /
    LengthMismatch / NotCaseVariant when the two sides do not line up.
    """
    if len(lower) != len(gold):
        raise TokenCountMismatch(
            f"token counts differ: {len(lower)} vs {len(gold)}"
        )
    word_labels: list[WordLabel] = []
    char_labels: list[CharLabels | None] = []
    for low_tok, gold_tok in zip(lower.tokens, gold.tokens):
        if len(low_tok) != len(gold_tok):
            raise LengthMismatch(
                f"token lengths differ: {low_tok!r} vs {gold_tok!r}"
            )
        labels = []
        any_upper = False
        for lc, gc in zip(low_tok, gold_tok):
            if gc == lc:
                labels.append(CharLabel.LOWER)
            elif is_upcasable(lc) and upper_char(lc) == gc:
                labels.append(CharLabel.UPPER)
                any_upper = True
            else:
                raise NotCaseVariant(
                    f"{gold_tok!r} is not a case variant of {low_tok!r}"
                )
        if any_upper:
            word_labels.append(WordLabel.OTHER)
            char_labels.append(tuple(labels))
        else:
            # No case information to generate, including fully caseless
            # tokens; the word is copied as-is.
            word_labels.append(WordLabel.SELF)
            char_labels.append(None)
    return tuple(word_labels), tuple(char_labels)


def pair_from_gold(gold: Sentence) -> LabeledPair:
    """Lowercase a gold sentence and derive the labels in one step."""
    lower = gold.lowered()
    word_labels, char_labels = derive_labels(lower, gold)
    return LabeledPair(lower, gold, word_labels, char_labels)


def apply_labels(
    lower: Sentence,
    word_labels: WordLabels,
    char_labels: tuple[CharLabels | None, ...],
) -> Sentence:
    """Inverse of derive_labels: rebuild the cased sentence.

    Uppercasing is only applied where it is invertible, so the output
    always lowercases back to the input byte for byte.
    """
    if len(lower) != len(word_labels) or len(lower) != len(char_labels):
        raise TokenCountMismatch("label count does not match token count")
    out: list[str] = []
    for tok, wl, cls_ in zip(lower.tokens, word_labels, char_labels):
        if wl == WordLabel.SELF:
            out.append(tok)
            continue
        if cls_ is None:
            raise LengthMismatch(f"OTHER word {tok!r} has no char labels")
        if len(cls_) != len(tok):
            raise LengthMismatch(
                f"char label count {len(cls_)} does not match {tok!r}"
            )
        chars = [
            upper_char(c) if (cl == CharLabel.UPPER and is_upcasable(c)) else c
            for c, cl in zip(tok, cls_)
        ]
        out.append("".join(chars))
    return Sentence(tuple(out))


def classify_word(token: str) -> WordClass:
    """Bucket a cased token for the per-class evaluation breakdown.

    Precedence: LC (no uppercase), then CA (all cased chars uppercase,
    so single capitals like "A" count as CA, not UC), then UC, then MC.
    """
    uppers = [c for c in token if is_upper_char(c)]
    if not uppers:
        return WordClass.LC
    cased = [c for c in token if is_upper_char(c) or is_upcasable(c)]
    if all(is_upper_char(c) for c in cased):
        return WordClass.CA
    if is_upper_char(token[0]) and not any(is_upper_char(c) for c in token[1:]):
        return WordClass.UC
    return WordClass.MC


def ingest_lines(lines: Iterable[str]) -> tuple[list[Sentence], int]:
    """Parse gold-cased corpus lines, skipping and counting bad ones.

    A line is skipped when it is blank, contains a token whose gold form
    is not a case variant of its own lowercase form (exotic one-way case
    mappings), or otherwise fails to parse.
    """
    sentences: list[Sentence] = []
    skipped = 0
    for line in lines:
        try:
            sent = Sentence.from_line(line)
            if not sent.tokens:
                skipped += 1
                continue
            derive_labels(sent.lowered(), sent)
        except CorpusError:
            skipped += 1
            continue
        sentences.append(sent)
    return sentences, skipped


def read_corpus(path: str) -> tuple[list[Sentence], int]:
    with open(path, "r", encoding="utf-8", errors="surrogateescape") as fh:
        return ingest_lines(fh)
