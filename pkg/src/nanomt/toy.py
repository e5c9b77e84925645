"""Synthetic desk-scale corpora: copy, reverse, and digits-to-words.

The digits-to-words task maps numeral sequences ("31 7") to their English
word forms ("thirty one seven"). Numbers are drawn from a skewed (Zipf-like)
distribution with a tendency to continue runs (v, v+1, ...), so target-side
text has both rare word forms and bigram structure: plenty for a language
model trained on the (much larger) monolingual sample to teach a
translation model that only saw a few hundred pairs.

The monolingual generator uses the same target process with a wider length
range, so the prior is on-domain and its support covers the parallel data.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .data import write_lines
from .errors import ConfigError, InvalidInputError
from .seeding import stream_rng

TASKS = ("copy", "reverse", "digits-to-words")

_ONES = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight",
    "nine", "ten", "eleven", "twelve", "thirteen", "fourteen", "fifteen",
    "sixteen", "seventeen", "eighteen", "nineteen",
]
_TENS = ["", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety"]


def number_to_words(n: int) -> str:
    """English words for 0..999; compound forms are multiple whitespace words."""
    if not 0 <= n <= 999:
        raise InvalidInputError(f"number out of range: {n}")
    if n < 20:
        return _ONES[n]
    if n < 100:
        tens, ones = divmod(n, 10)
        return _TENS[tens] if ones == 0 else f"{_TENS[tens]} {_ONES[ones]}"
    hundreds, rest = divmod(n, 100)
    head = f"{_ONES[hundreds]} hundred"
    return head if rest == 0 else f"{head} {number_to_words(rest)}"


@dataclass
class ToyCorpus:
    train_pairs: list[tuple[str, str]]
    dev_pairs: list[tuple[str, str]]
    test_pairs: list[tuple[str, str]]
    mono_lines: list[str]


def _letter_sentences(rng, n: int, alphabet: list[str], min_len: int, max_len: int) -> list[str]:
    out = []
    for _ in range(n):
        length = int(rng.integers(min_len, max_len + 1))
        out.append(" ".join(rng.choice(alphabet) for _ in range(length)))
    return out


def _number_sentence(rng, weights: np.ndarray, max_number: int, length: int, run_prob: float) -> list[int]:
    values = []
    for _ in range(length):
        if values and rng.random() < run_prob:
            values.append((values[-1] + 1) % (max_number + 1))
        else:
            values.append(int(rng.choice(max_number + 1, p=weights)))
    return values


def _zipf_weights(max_number: int, exponent: float) -> np.ndarray:
    w = 1.0 / np.power(np.arange(1, max_number + 2, dtype=np.float64), exponent)
    return w / w.sum()


def generate(
    task: str,
    n_pairs: int,
    n_mono: int,
    seed: int,
    n_dev: int = 200,
    n_test: int = 200,
    alphabet_size: int = 20,
    max_number: int = 99,
    zipf_exponent: float = 1.1,
    run_prob: float = 0.35,
    separator: str = "",
    min_len: int = 3,
    max_len: int = 8,
    mono_min_len: int = 2,
    mono_max_len: int = 11,
) -> ToyCorpus:
    """Deterministic toy corpora for one task; all randomness comes from the
    "toygen" stream of ``seed``."""
    if task not in TASKS:
        raise ConfigError(f"unknown toy task {task!r} (expected one of {TASKS})")
    if n_pairs <= 0 or n_mono <= 0:
        raise ConfigError("n_pairs and n_mono must be positive")
    rng = stream_rng(seed, "toygen")

    if task in ("copy", "reverse"):
        alphabet = [chr(ord("a") + i) for i in range(alphabet_size)]
        sources = _letter_sentences(rng, n_pairs + n_dev + n_test, alphabet, min_len, max_len)
        if task == "copy":
            pairs = [(s, s) for s in sources]
        else:
            pairs = [(s, " ".join(reversed(s.split()))) for s in sources]
        mono = _letter_sentences(rng, n_mono, alphabet, mono_min_len, mono_max_len)
    else:
        weights = _zipf_weights(max_number, zipf_exponent)
        joiner = f" {separator} " if separator else " "

        def sample_pairs(count: int, lo: int, hi: int) -> list[tuple[str, str]]:
            result = []
            for _ in range(count):
                length = int(rng.integers(lo, hi + 1))
                values = _number_sentence(rng, weights, max_number, length, run_prob)
                src = " ".join(str(v) for v in values)
                tgt = joiner.join(number_to_words(v) for v in values)
                result.append((src, tgt))
            return result

        pairs = sample_pairs(n_pairs + n_dev + n_test, min_len, max_len)
        mono = [tgt for _, tgt in sample_pairs(n_mono, mono_min_len, mono_max_len)]

    return ToyCorpus(
        train_pairs=pairs[:n_pairs],
        dev_pairs=pairs[n_pairs : n_pairs + n_dev],
        test_pairs=pairs[n_pairs + n_dev :],
        mono_lines=mono,
    )


def write_corpus(corpus: ToyCorpus, out_dir: str) -> dict[str, str]:
    """Write the seven corpus files; returns name -> path."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    for split, pairs in (
        ("train", corpus.train_pairs),
        ("dev", corpus.dev_pairs),
        ("test", corpus.test_pairs),
    ):
        for side, idx in (("src", 0), ("tgt", 1)):
            path = os.path.join(out_dir, f"{split}.{side}")
            write_lines(path, [p[idx] for p in pairs])
            paths[f"{split}_{side}"] = path
    mono_path = os.path.join(out_dir, "mono.txt")
    write_lines(mono_path, corpus.mono_lines)
    paths["mono"] = mono_path
    return paths
