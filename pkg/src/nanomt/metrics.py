"""Evaluation metrics and output-distribution analyses.

BLEU is classic corpus BLEU over whitespace tokens of detokenized text:
clipped modified n-gram precisions, geometric mean, multiplicative brevity
penalty. No smoothing by default (a zero n-gram precision zeroes the score);
add-one smoothing is available for tiny corpora and is recorded on the
result.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import Batch
from .errors import InvalidInputError
from .probability import entropy_array, log_softmax_array, renormalized_product, softmax_array

SMOOTHING_MODES = ("none", "add1")


@dataclass
class BleuScore:
    score: float
    precisions: list[float]
    brevity_penalty: float
    hyp_tokens: int
    ref_tokens: int
    smoothing: str

    def __str__(self) -> str:
        parts = "/".join(f"{100 * p:.1f}" for p in self.precisions)
        return (
            f"BLEU = {self.score:.2f} ({parts}) BP = {self.brevity_penalty:.3f} "
            f"hyp/ref = {self.hyp_tokens}/{self.ref_tokens} smoothing = {self.smoothing}"
        )


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(
    hypotheses: list[str],
    references: list[str],
    max_n: int = 4,
    smoothing: str = "none",
) -> BleuScore:
    """Corpus-level BLEU of detokenized hypotheses against single references."""
    if smoothing not in SMOOTHING_MODES:
        raise InvalidInputError(f"unknown smoothing mode {smoothing!r}")
    if len(references) == 0:
        raise InvalidInputError("empty reference set")
    if len(hypotheses) != len(references):
        raise InvalidInputError(
            f"{len(hypotheses)} hypotheses vs {len(references)} references"
        )

    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_tok = hyp.split()
        ref_tok = ref.split()
        hyp_len += len(hyp_tok)
        ref_len += len(ref_tok)
        for n in range(1, max_n + 1):
            hyp_counts = _ngrams(hyp_tok, n)
            if not hyp_counts:
                continue
            ref_counts = _ngrams(ref_tok, n)
            totals[n - 1] += sum(hyp_counts.values())
            matches[n - 1] += sum(
                min(c, ref_counts.get(g, 0)) for g, c in hyp_counts.items()
            )

    precisions = []
    for m, t in zip(matches, totals):
        if smoothing == "add1":
            precisions.append((m + 1) / (t + 1))
        else:
            precisions.append(m / t if t > 0 else 0.0)

    if hyp_len == 0:
        bp = 0.0
    else:
        bp = min(1.0, math.exp(1.0 - ref_len / hyp_len))

    if all(p > 0 for p in precisions):
        geo = math.exp(sum(math.log(p) for p in precisions) / max_n)
        score = 100.0 * bp * geo
    else:
        score = 0.0
    return BleuScore(score, precisions, bp, hyp_len, ref_len, smoothing)


def _batch_logits(model, batch: Batch) -> np.ndarray:
    with ad.no_grad():
        if batch.src_ids is None:
            logits = model.logits(batch.tgt_ids[:, :-1])
        else:
            logits = model.logits(batch.src_ids, batch.src_mask, batch.tgt_ids[:, :-1])
    return logits.data


def teacher_forced_nll(model, batches: list[Batch]) -> tuple[float, int]:
    """Mean per-token negative log-likelihood of the gold targets."""
    total = 0.0
    count = 0
    for batch in batches:
        log_probs = log_softmax_array(_batch_logits(model, batch))
        gold = batch.tgt_ids[:, 1:]
        mask = batch.tgt_mask[:, 1:]
        picked = np.take_along_axis(log_probs, gold[..., None], axis=-1)[..., 0]
        total += -(picked * mask).sum()
        count += int(mask.sum())
    if count == 0:
        raise InvalidInputError("perplexity needs a non-empty corpus")
    return total / count, count


def perplexity(model, batches: list[Batch]) -> float:
    """exp(mean teacher-forced NLL per non-pad token)."""
    mean_nll, _ = teacher_forced_nll(model, batches)
    return float(math.exp(mean_nll))


@dataclass
class EntropyProfile:
    """Per-token entropies (nats) of a model's output distributions."""

    values: np.ndarray
    vocab_size: int
    bin_width: float = 0.2

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    @property
    def median(self) -> float:
        return float(np.median(self.values))

    def histogram(self) -> list[tuple[float, float, int]]:
        """(bin_low, bin_high, count) rows with fixed-width bins covering
        [0, ln K]."""
        upper = math.log(self.vocab_size)
        n_bins = max(1, math.ceil(upper / self.bin_width))
        edges = np.arange(n_bins + 1) * self.bin_width
        counts, _ = np.histogram(self.values, bins=edges)
        return [
            (float(edges[i]), float(edges[i + 1]), int(counts[i]))
            for i in range(n_bins)
        ]


ENTROPY_MODES = ("tm", "lm", "combined")


def entropy_profile(
    batches: list[Batch],
    tm=None,
    lm=None,
    mode: str = "tm",
    bin_width: float = 0.2,
) -> EntropyProfile:
    """One entropy per non-pad gold position, teacher forced.

    mode selects the profiled distribution: the translation model, the
    language model, or their renormalized product (the postnorm output).
    """
    if mode not in ENTROPY_MODES:
        raise InvalidInputError(f"unknown entropy mode {mode!r}")
    if mode in ("tm", "combined") and tm is None:
        raise InvalidInputError(f"mode {mode!r} needs a translation model")
    if mode in ("lm", "combined") and lm is None:
        raise InvalidInputError(f"mode {mode!r} needs a language model")
    values = []
    vocab_size = None
    for batch in batches:
        mask = batch.tgt_mask[:, 1:]
        if mode == "tm":
            probs = softmax_array(_batch_logits(tm, batch))
        elif mode == "lm":
            mono = Batch(tgt_ids=batch.tgt_ids, tgt_mask=batch.tgt_mask, token_count=batch.token_count)
            probs = softmax_array(_batch_logits(lm, mono))
        else:
            tm_probs = softmax_array(_batch_logits(tm, batch))
            mono = Batch(tgt_ids=batch.tgt_ids, tgt_mask=batch.tgt_mask, token_count=batch.token_count)
            lm_probs = softmax_array(_batch_logits(lm, mono))
            probs = renormalized_product(tm_probs, lm_probs)
        vocab_size = probs.shape[-1]
        ent = entropy_array(probs)
        values.append(ent[mask])
    if not values:
        raise InvalidInputError("entropy profile needs at least one batch")
    stacked = np.clip(np.concatenate(values), 0.0, math.log(vocab_size))
    return EntropyProfile(stacked, vocab_size, bin_width)


def write_entropy_csv(path, profiles: dict[str, EntropyProfile]) -> None:
    """Histogram rows for every profiled model, one CSV.

    Columns: bin_low, bin_high, count, model_tag.
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("bin_low,bin_high,count,model_tag\n")
        for tag, profile in profiles.items():
            for low, high, count in profile.histogram():
                fh.write(f"{low:.6f},{high:.6f},{count},{tag}\n")
