from collections import Counter

import pytest
from hypothesis import given, strategies as st

from hiercase.features import (
    BOUNDARY,
    FeatureConfig,
    bucket_of,
    char_bucket_id,
    embed_word,
    fnv1a_64,
    token_bucket_ids,
    token_ngrams,
)


def test_fnv1a_published_vectors():
    assert fnv1a_64(b"") == 0xCBF29CE484222325
    assert fnv1a_64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a_64(b"foobar") == 0x85944171F73967E8


def test_fnv1a_frozen_goldens():
    # Frozen from an independent implementation.
    assert fnv1a_64(b"av") == 0x089C5007B545ACCE
    assert fnv1a_64(b"ave") == 0xE748A81905646691
    assert bucket_of("av", 5000) == 1294
    assert bucket_of("ave", 5000) == 153


def test_ave_ngrams():
    B = BOUNDARY
    got = Counter(token_ngrams("ave", 3))
    want = Counter(
        ["a", "v", "e", B + "a", "av", "ve", "e" + B, B + "av", "ave", "ve" + B]
    )
    assert got == want
    assert sum(got.values()) == 10


def test_repeated_ngrams_kept_as_multiset():
    grams = token_ngrams("aa", 3)
    assert Counter(grams)["a"] == 2
    cfg = FeatureConfig(max_ngram_order=3, num_buckets=50)
    ids = token_bucket_ids("aa", cfg)
    assert len(ids) == len(grams)
    deduped = token_bucket_ids("aa", FeatureConfig(3, 50, dedupe=True))
    assert len(deduped) == len(set(grams))


def test_order_one_only_single_chars():
    grams = token_ngrams("abc", 1)
    assert grams == ["a", "b", "c"]


def test_char_bucket_matches_unigram():
    cfg = FeatureConfig(num_buckets=777)
    assert char_bucket_id("a", cfg) == bucket_of("a", 777)
    assert char_bucket_id("ß", cfg) == bucket_of("ß", 777)


def test_config_validation():
    with pytest.raises(ValueError):
        FeatureConfig(max_ngram_order=0)
    with pytest.raises(ValueError):
        FeatureConfig(num_buckets=0)


_TOKEN = st.text(
    alphabet=st.sampled_from(list("abcdefäöß0.'-")), min_size=1, max_size=10
)


@given(_TOKEN, st.integers(min_value=1, max_value=4))
def test_ngram_count_formula(token, order):
    grams = token_ngrams(token, order)
    assert all(any(c != BOUNDARY for c in g) for g in grams)
    padded_len = len(token) + 2
    expect = 0
    for n in range(1, min(order, padded_len) + 1):
        expect += padded_len - n + 1
    expect -= 2 if len(token) >= 1 else 0  # the two lone boundary unigrams
    assert len(grams) == expect


@given(_TOKEN)
def test_bucket_ids_in_range_and_deterministic(token):
    cfg = FeatureConfig(num_buckets=97)
    ids = token_bucket_ids(token, cfg)
    assert ids == token_bucket_ids(token, cfg)
    assert all(0 <= i < 97 for i in ids)


def test_embed_word_is_linear_in_the_table():
    import numpy as np
    cfg = FeatureConfig(max_ngram_order=3, num_buckets=101)
    rng = np.random.RandomState(4)
    a = rng.randn(101, 7)
    b = rng.randn(101, 7)
    for token in ("ave", "aa", "o'neil", "x", "hello-world"):
        np.testing.assert_allclose(
            embed_word(token, a + b, cfg),
            embed_word(token, a, cfg) + embed_word(token, b, cfg),
            rtol=1e-12)


def test_embed_word_counts_repeats():
    import numpy as np
    cfg = FeatureConfig(max_ngram_order=1, num_buckets=13)
    table = np.random.RandomState(1).randn(13, 4)
    row = table[bucket_of("a", 13)]
    np.testing.assert_allclose(embed_word("aa", table, cfg), 2 * row)


def test_embed_word_rejects_wrong_table():
    import numpy as np
    cfg = FeatureConfig(num_buckets=13)
    with pytest.raises(ValueError):
        embed_word("a", np.zeros((12, 4)), cfg)


def test_hash_load_stays_near_uniform():
    # 1e5 distinct n-grams over 997 buckets: no bucket may soak up more
    # than 5x the mean load.
    import numpy as np
    num_buckets = 997
    rng = np.random.RandomState(8)
    letters = "abcdefghijklmnopqrstuvwxyz"
    seen = set()
    while len(seen) < 100_000:
        k = int(rng.randint(1, 4))
        seen.add("".join(letters[i] for i in rng.randint(0, 26, k + 2)))
    counts = np.zeros(num_buckets, dtype=np.int64)
    for gram in seen:
        counts[bucket_of(gram, num_buckets)] += 1
    mean = counts.sum() / num_buckets
    assert counts.max() <= 5 * mean
