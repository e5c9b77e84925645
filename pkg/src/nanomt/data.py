"""Corpus ingestion, length filtering and token-budget batching."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .tokenizer import BOS, EOS, PAD, SubwordModel


def read_lines(path, lowercase: bool = False) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh]
    if lowercase:
        lines = [line.lower() for line in lines]
    return lines


def write_lines(path, lines) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")


def word_count(line: str) -> int:
    """Whitespace word count; the unit for all length filters."""
    return len(line.split())


def filter_parallel(
    pairs: list[tuple[str, str]], max_len: int = 60, max_ratio: float = 1.5
) -> list[tuple[str, str]]:
    """Keep pairs whose sides are both <= max_len words and whose longer/shorter
    word-count ratio is <= max_ratio. Empty sides are dropped (the ratio would
    be undefined)."""
    kept = []
    for src, tgt in pairs:
        ls, lt = word_count(src), word_count(tgt)
        if ls == 0 or lt == 0:
            continue
        if ls > max_len or lt > max_len:
            continue
        if max(ls, lt) / min(ls, lt) > max_ratio:
            continue
        kept.append((src, tgt))
    return kept


def filter_mono(lines: list[str], max_len: int = 50) -> list[str]:
    """Keep non-empty lines of at most max_len whitespace words."""
    return [line for line in lines if 0 < word_count(line) <= max_len]


@dataclass
class ParallelCorpus:
    """Encoded sentence pairs; target sequences carry BOS and EOS."""

    pairs: list[tuple[np.ndarray, np.ndarray]]

    def __len__(self) -> int:
        return len(self.pairs)


def encode_parallel(
    pairs: list[tuple[str, str]], src_model: SubwordModel, tgt_model: SubwordModel
) -> ParallelCorpus:
    encoded = []
    for src, tgt in pairs:
        src_ids = np.asarray(src_model.encode(src), dtype=np.int64)
        tgt_ids = np.asarray([BOS] + tgt_model.encode(tgt) + [EOS], dtype=np.int64)
        encoded.append((src_ids, tgt_ids))
    return ParallelCorpus(encoded)


def encode_mono(lines: list[str], model: SubwordModel) -> list[np.ndarray]:
    return [
        np.asarray([BOS] + model.encode(line) + [EOS], dtype=np.int64)
        for line in lines
    ]


@dataclass
class Batch:
    """Padded id matrices with masks. ``src_ids`` is None for monolingual
    batches. Masks are True exactly on non-PAD positions."""

    tgt_ids: np.ndarray
    tgt_mask: np.ndarray
    token_count: int
    src_ids: np.ndarray | None = None
    src_mask: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.tgt_ids.shape[0]


def _pad_rows(rows: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    width = max(len(r) for r in rows)
    ids = np.full((len(rows), width), PAD, dtype=np.int64)
    mask = np.zeros((len(rows), width), dtype=bool)
    for i, row in enumerate(rows):
        ids[i, : len(row)] = row
        mask[i, : len(row)] = True
    return ids, mask


def _pack(costs: list[int], order: np.ndarray, budget: int) -> list[list[int]]:
    groups: list[list[int]] = []
    current: list[int] = []
    total = 0
    for idx in order:
        cost = costs[idx]
        if current and total + cost > budget:
            groups.append(current)
            current, total = [], 0
        current.append(int(idx))
        total += cost
    if current:
        groups.append(current)
    return groups


def make_batches(
    corpus: ParallelCorpus | list[np.ndarray],
    tokens_per_batch: int,
    shuffle_seed,
) -> list[Batch]:
    """Group sentences into batches of at most ``tokens_per_batch`` tokens.

    A sentence's cost is its longer side. Sentences are shuffled, stably
    sorted by cost (length bucketing, which limits padding), packed greedily,
    and the batch order is shuffled again. Singleton sentences longer than
    the budget get their own batch. Every sentence lands in exactly one batch.
    """
    mono = not isinstance(corpus, ParallelCorpus)
    items = corpus if mono else corpus.pairs
    if len(items) == 0:
        raise InvalidInputError("cannot batch an empty corpus")
    if mono:
        costs = [len(row) for row in items]
    else:
        costs = [max(len(s), len(t)) for s, t in items]

    rng = np.random.default_rng(shuffle_seed)
    order = rng.permutation(len(items))
    order = order[np.argsort([costs[i] for i in order], kind="stable")]
    groups = _pack(costs, order, tokens_per_batch)
    rng.shuffle(groups)

    batches = []
    for group in groups:
        count = sum(costs[i] for i in group)
        if mono:
            ids, mask = _pad_rows([items[i] for i in group])
            batches.append(Batch(tgt_ids=ids, tgt_mask=mask, token_count=count))
        else:
            src_ids, src_mask = _pad_rows([items[i][0] for i in group])
            tgt_ids, tgt_mask = _pad_rows([items[i][1] for i in group])
            batches.append(
                Batch(
                    tgt_ids=tgt_ids,
                    tgt_mask=tgt_mask,
                    token_count=count,
                    src_ids=src_ids,
                    src_mask=src_mask,
                )
            )
    return batches
