"""Corpus filtering and batching contracts."""

import numpy as np
import pytest

from nanomt.data import (
    Batch,
    ParallelCorpus,
    encode_mono,
    encode_parallel,
    filter_mono,
    filter_parallel,
    make_batches,
)
from nanomt.errors import InvalidInputError
from nanomt.tokenizer import BOS, EOS, PAD, train_subword_model


def words(n):
    return " ".join(["w"] * n)


class TestFilterParallel:
    def test_long_side_removed(self):
        assert filter_parallel([(words(61), words(10))]) == []

    def test_ratio_above_limit_removed(self):
        assert filter_parallel([(words(10), words(16))]) == []

    def test_equal_lengths_kept(self):
        pair = (words(10), words(10))
        assert filter_parallel([pair]) == [pair]

    def test_boundaries_inclusive(self):
        at_len = (words(60), words(60))
        at_ratio = (words(10), words(15))
        assert filter_parallel([at_len, at_ratio]) == [at_len, at_ratio]

    def test_empty_side_dropped(self):
        assert filter_parallel([("", words(3)), (words(3), "")]) == []

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        pairs = [(words(int(rng.integers(1, 80))), words(int(rng.integers(1, 80))))
                 for _ in range(200)]
        once = filter_parallel(pairs)
        assert filter_parallel(once) == once


class TestFilterMono:
    def test_51_words_removed(self):
        assert filter_mono([words(51)]) == []

    def test_50_words_kept(self):
        assert filter_mono([words(50)]) == [words(50)]

    def test_empty_line_removed(self):
        assert filter_mono(["", words(3)]) == [words(3)]

    def test_idempotent(self):
        lines = [words(n) for n in range(0, 70, 7)]
        once = filter_mono(lines)
        assert filter_mono(once) == once


def _toy_corpus(n=30, seed=0):
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n):
        ls = int(rng.integers(2, 9))
        lt = int(rng.integers(2, 9))
        pairs.append((
            np.asarray(rng.integers(4, 10, size=ls), dtype=np.int64),
            np.asarray([BOS] + list(rng.integers(4, 10, size=lt)) + [EOS], dtype=np.int64),
        ))
    return ParallelCorpus(pairs)


class TestMakeBatches:
    def test_greedy_packing_oracle(self):
        # three 10-token sentences with a 25-token budget pack as {2, 1}
        rows = [np.full(10, 5, dtype=np.int64) for _ in range(3)]
        batches = make_batches(rows, tokens_per_batch=25, shuffle_seed=0)
        assert sorted(b.size for b in batches) == [1, 2]
        assert all(b.token_count <= 25 for b in batches)

    def test_big_budget_single_batch(self):
        corpus = _toy_corpus(10)
        batches = make_batches(corpus, tokens_per_batch=10_000, shuffle_seed=3)
        assert len(batches) == 1
        assert batches[0].size == 10

    def test_oversized_singleton_allowed(self):
        rows = [np.full(40, 5, dtype=np.int64), np.full(3, 5, dtype=np.int64)]
        batches = make_batches(rows, tokens_per_batch=8, shuffle_seed=0)
        assert sorted(b.token_count for b in batches) == [3, 40]

    def test_deterministic_for_fixed_seed(self):
        corpus = _toy_corpus(40)
        a = make_batches(corpus, 30, shuffle_seed=11)
        b = make_batches(corpus, 30, shuffle_seed=11)
        assert len(a) == len(b)
        for x, y in zip(a, b):
            assert np.array_equal(x.tgt_ids, y.tgt_ids)
            assert np.array_equal(x.src_ids, y.src_ids)

    def test_union_is_corpus_for_any_seed(self):
        corpus = _toy_corpus(50, seed=4)
        want = sorted(tuple(t) for _, t in corpus.pairs)
        for seed in range(5):
            batches = make_batches(corpus, 40, shuffle_seed=seed)
            got = []
            for b in batches:
                for row, mask in zip(b.tgt_ids, b.tgt_mask):
                    got.append(tuple(row[mask]))
            assert sorted(got) == want

    def test_empty_corpus_rejected(self):
        with pytest.raises(InvalidInputError):
            make_batches(ParallelCorpus([]), 10, 0)

    def test_batch_invariants(self):
        corpus = _toy_corpus(25, seed=9)
        for batch in make_batches(corpus, 35, shuffle_seed=1):
            assert np.array_equal(batch.tgt_mask, batch.tgt_ids != PAD)
            assert np.array_equal(batch.src_mask, batch.src_ids != PAD)
            for row, mask in zip(batch.tgt_ids, batch.tgt_mask):
                real = row[mask]
                assert real[0] == BOS
                assert (real == EOS).sum() == 1
                assert real[-1] == EOS


class TestEncoding:
    def test_targets_wrapped_with_bos_eos(self):
        tok = train_subword_model(["a b", "b c"], vocab_size=20)
        corpus = encode_parallel([("a b", "b c")], tok, tok)
        src, tgt = corpus.pairs[0]
        assert tgt[0] == BOS and tgt[-1] == EOS
        assert BOS not in src and EOS not in src

    def test_mono_rows_wrapped(self):
        tok = train_subword_model(["a b"], vocab_size=20)
        rows = encode_mono(["a b", "b"], tok)
        for row in rows:
            assert row[0] == BOS and row[-1] == EOS
