"""Hashed character n-gram features.

A token is padded with a boundary marker on both sides and every substring
of length 1..max_ngram_order that contains at least one real character is
a feature. "ave" with order 3 yields ten features:

    a, v, e, [B]a, av, ve, e[B], [B]av, ave, ve[B]

where [B] is the boundary marker. Features are hashed with 64-bit FNV-1a
over their UTF-8 bytes into a fixed number of buckets; the word embedding
is the sum of the bucket embedding rows, counted with multiplicity unless
deduplication is switched on. Single characters go through the same hash,
so the character model shares the embedding table with the word model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BOUNDARY = "\x01"  # assumed absent from real text; tokens are whitespace-free

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


@dataclass(frozen=True, slots=True)
class FeatureConfig:
    max_ngram_order: int = 3
    num_buckets: int = 5000
    dedupe: bool = False

    def __post_init__(self) -> None:
        if self.max_ngram_order < 1:
            raise ValueError("max_ngram_order must be >= 1")
        if self.num_buckets < 1:
            raise ValueError("num_buckets must be >= 1")


def token_ngrams(token: str, max_order: int) -> list[str]:
    """All boundary-padded substrings up to max_order with >= 1 real char."""
    padded = BOUNDARY + token + BOUNDARY
    grams: list[str] = []
    for start in range(len(padded)):
        top = min(max_order, len(padded) - start)
        for length in range(1, top + 1):
            gram = padded[start : start + length]
            if any(c != BOUNDARY for c in gram):
                grams.append(gram)
    return grams


def bucket_of(gram: str, num_buckets: int) -> int:
    return fnv1a_64(gram.encode("utf-8", errors="surrogateescape")) % num_buckets


def token_bucket_ids(token: str, config: FeatureConfig) -> list[int]:
    """Hashed feature ids for a token, with multiplicity by default."""
    grams = token_ngrams(token, config.max_ngram_order)
    if config.dedupe:
        grams = sorted(set(grams))
    return [bucket_of(g, config.num_buckets) for g in grams]


def char_bucket_id(ch: str, config: FeatureConfig) -> int:
    """Bucket for a single character, sharing the n-gram hash space."""
    return bucket_of(ch, config.num_buckets)


def embed_word(token: str, table: np.ndarray,
               config: FeatureConfig) -> np.ndarray:
    """Sum the embedding rows of a token's hashed n-grams.

    Repeated n-grams contribute repeatedly unless the config dedupes,
    so the result is linear in the table either way.
    """
    if table.ndim != 2 or table.shape[0] != config.num_buckets:
        raise ValueError(
            f"table shape {table.shape} does not match "
            f"{config.num_buckets} buckets")
    ids = token_bucket_ids(token, config)
    return table[ids].sum(axis=0)
