"""Greedy and beam-search decoding with pluggable fusion scoring.

Scoring is factored into two interfaces so tests can substitute table-driven
toy models:

* a *stepper* maps a batch of BOS-prefixed prefixes to next-token log
  probabilities;
* a ``FusionScorer`` combines translation-model log probabilities with an
  optional language model (plain / shallow / postnorm).

Beam semantics: the beam holds open hypotheses only. Each step expands every
open hypothesis over the vocabulary, ranks candidates by cumulative raw
log-score (ties broken toward the lexicographically smaller token sequence,
i.e. the lower token id), moves EOS candidates ranked within the beam into a
finished pool, and keeps the top ``beam_size`` open candidates. The search
runs to ``max_len`` (EOS is forced there), then the pool is compared by
length-normalized score (score / generated length) unless normalization is
off. With normalization off, beam_size=1 returns exactly the greedy path:
step scores are log probabilities, so no continuation can outscore the
finished greedy hypothesis; with normalization on, the pool may legitimately
prefer a longer completion.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, InvalidInputError
from .probability import Distribution, log_softmax_array, softmax_array
from .tokenizer import BOS, EOS

FUSION_MODES = ("plain", "shallow", "postnorm")


@dataclass
class Hypothesis:
    """A BOS-prefixed candidate with its cumulative log-score."""

    tokens: list[int]
    score: float
    finished: bool = False

    @property
    def generated(self) -> int:
        """Tokens emitted after BOS (EOS included once finished)."""
        return len(self.tokens) - 1

    def normalized_score(self) -> float:
        return self.score / max(1, self.generated)


class TranslatorStepper:
    """Incremental next-token scoring for a batch of source sentences.

    Encodes the sources once; each call re-runs the decoder on the given
    prefixes (quadratic in length, fine at toy scale). ``rows`` selects which
    source sentence each prefix belongs to.
    """

    def __init__(self, tm, src_ids: np.ndarray, src_mask: np.ndarray):
        src_ids = np.atleast_2d(np.asarray(src_ids, dtype=np.int64))
        src_mask = np.atleast_2d(np.asarray(src_mask, dtype=bool))
        self.tm = tm
        self.src_ids = src_ids
        self.src_mask = src_mask
        with ad.no_grad():
            self.memory = tm.encode(src_ids, src_mask).data

    def next_log_probs(self, prefixes: np.ndarray, rows: np.ndarray) -> np.ndarray:
        prefixes = np.asarray(prefixes, dtype=np.int64)
        rows = np.asarray(rows, dtype=np.int64)
        with ad.no_grad():
            logits = self.tm.decoder_logits(
                ad.Tensor(self.memory[rows]), self.src_mask[rows], prefixes
            )
        return log_softmax_array(logits.data[:, -1, :])


class LMStepper:
    """Next-token scoring under a language model; counts evaluations so tests
    can assert the LM is never touched in plain mode."""

    def __init__(self, lm):
        self.lm = lm
        self.calls = 0

    def next_log_probs(self, prefixes: np.ndarray) -> np.ndarray:
        self.calls += 1
        prefixes = np.asarray(prefixes, dtype=np.int64)
        with ad.no_grad():
            logits = self.lm.logits(prefixes)
        return log_softmax_array(logits.data[:, -1, :])


def step_score(
    mode: str,
    tm_dist: Distribution,
    lm_dist: Distribution | None = None,
    beta: float = 0.0,
) -> np.ndarray:
    """Per-step log-score vector over the vocabulary for one fusion mode.

    plain:    log p_TM
    shallow:  (1 - beta) log p_TM + beta log p_LM   (not renormalized)
    postnorm: log softmax(log p_TM + log p_LM), the normalized product
    """
    if mode not in FUSION_MODES:
        raise ConfigError(f"unknown fusion mode {mode!r}")
    if mode == "plain":
        return tm_dist.log_probs
    if lm_dist is None:
        raise ConfigError(f"fusion mode {mode!r} needs a language model")
    if tm_dist.size != lm_dist.size:
        raise ConfigError("fused distributions must share a vocabulary")
    if mode == "shallow":
        return (1.0 - beta) * tm_dist.log_probs + beta * lm_dist.log_probs
    return log_softmax_array(tm_dist.log_probs + lm_dist.log_probs)


@dataclass
class FusionScorer:
    """Decode-time scorer. ``beta`` is the shallow-fusion interpolation
    weight; ``lm`` (an LMStepper) is required unless mode is plain."""

    mode: str = "plain"
    beta: float = 0.0
    lm: LMStepper | None = None

    def __post_init__(self):
        if self.mode not in FUSION_MODES:
            raise ConfigError(f"unknown fusion mode {self.mode!r}")
        if self.mode != "plain" and self.lm is None:
            raise ConfigError(f"fusion mode {self.mode!r} needs a language model")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must be in [0, 1], got {self.beta}")

    def combine(self, tm_log_probs: np.ndarray, prefixes: np.ndarray) -> np.ndarray:
        if self.mode == "plain":
            return tm_log_probs
        lm_log_probs = self.lm.next_log_probs(prefixes)
        if lm_log_probs.shape != tm_log_probs.shape:
            raise ConfigError("fused models must share the target vocabulary")
        if self.mode == "shallow":
            return (1.0 - self.beta) * tm_log_probs + self.beta * lm_log_probs
        return log_softmax_array(tm_log_probs + lm_log_probs)


def _ensure_stepper(tm, src_ids, src_mask):
    if hasattr(tm, "next_log_probs"):
        return tm
    src_ids = np.atleast_2d(np.asarray(src_ids, dtype=np.int64))
    if src_mask is None:
        src_mask = np.ones_like(src_ids, dtype=bool)
    return TranslatorStepper(tm, src_ids, np.atleast_2d(src_mask))


def default_max_len(source_len: int, factor: float = 2.0, extra: int = 10) -> int:
    return int(factor * source_len) + extra


def beam_search(
    tm,
    src_ids,
    scorer: FusionScorer | None = None,
    beam_size: int = 5,
    max_len: int | None = None,
    length_normalize: bool = True,
) -> Hypothesis:
    """Best-first search over output sequences for a single source sentence.

    ``tm`` may be a model or any stepper object. Deterministic: candidate
    ties are broken by the lexicographically smaller token sequence, which
    for same-length prefixes means the lower token id. EOS is forced at
    ``max_len`` so a finished hypothesis always exists.
    """
    if beam_size < 1:
        raise InvalidInputError(f"beam_size must be >= 1, got {beam_size}")
    scorer = scorer or FusionScorer()
    src_ids = np.asarray(src_ids, dtype=np.int64)
    stepper = _ensure_stepper(tm, src_ids, None)
    if max_len is None:
        max_len = default_max_len(int(np.atleast_1d(src_ids).shape[-1]))

    live = [Hypothesis([BOS], 0.0)]
    pool: list[Hypothesis] = []

    for t in range(1, max_len + 1):
        if not live:
            break
        prefixes = np.asarray([h.tokens for h in live], dtype=np.int64)
        rows = np.zeros(len(live), dtype=np.int64)
        scores = scorer.combine(stepper.next_log_probs(prefixes, rows), prefixes)

        candidates: list[tuple[float, tuple[int, ...]]] = []
        for i, h in enumerate(live):
            if t == max_len:
                ids: list[int] = [EOS]  # out of budget: close every open path
            else:
                ids = range(scores.shape[1])
            for k in ids:
                candidates.append((h.score + float(scores[i, k]), tuple(h.tokens) + (int(k),)))

        candidates.sort(key=lambda c: (-c[0], c[1]))
        live = []
        for rank, (score, tokens) in enumerate(candidates):
            if tokens[-1] == EOS:
                if rank < beam_size:
                    pool.append(Hypothesis(list(tokens), score, finished=True))
            elif len(live) < beam_size:
                live.append(Hypothesis(list(tokens), score))

    key = (lambda h: (-h.normalized_score(), tuple(h.tokens))) if length_normalize else (
        lambda h: (-h.score, tuple(h.tokens))
    )
    return min(pool, key=key)


def greedy_decode_batch(
    tm,
    src_ids: np.ndarray,
    src_mask: np.ndarray,
    scorer: FusionScorer | None = None,
    max_len_factor: float = 2.0,
    max_len_extra: int = 10,
) -> list[list[int]]:
    """Argmax decoding of a whole batch at once.

    Per-row length budgets follow the per-sentence rule, so each row decodes
    exactly as beam_size=1 beam search would. Returns BOS-prefixed token
    lists ending in EOS.
    """
    scorer = scorer or FusionScorer()
    src_ids = np.asarray(src_ids, dtype=np.int64)
    src_mask = np.asarray(src_mask, dtype=bool)
    n = src_ids.shape[0]
    stepper = _ensure_stepper(tm, src_ids, src_mask)
    limits = np.array(
        [default_max_len(int(m.sum()), max_len_factor, max_len_extra) for m in src_mask]
    )
    prefixes = np.full((n, 1), BOS, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    for t in range(1, int(limits.max()) + 1):
        scores = scorer.combine(
            stepper.next_log_probs(prefixes, np.arange(n)), prefixes
        )
        nxt = scores.argmax(axis=1)
        nxt[t >= limits] = EOS
        nxt[~alive] = EOS  # rows already closed; value is ignored below
        prefixes = np.concatenate([prefixes, nxt[:, None]], axis=1)
        alive &= nxt != EOS
        if not alive.any():
            break
    out = []
    for row in prefixes:
        tokens = [int(row[0])]
        for tok in row[1:]:
            tokens.append(int(tok))
            if tok == EOS:
                break
        out.append(tokens)
    return out


@dataclass
class StepTrace:
    """One teacher-forced step of a fusion diagnostic."""

    position: int
    gold_id: int
    tm_top: list[tuple[int, float]]
    lm_top: list[tuple[int, float]]
    combined_top: list[tuple[int, float]]
    flip: bool


def _top_k(probs: np.ndarray, k: int) -> list[tuple[int, float]]:
    order = np.argsort(-probs, kind="stable")[:k]
    return [(int(i), float(probs[i])) for i in order]


def trace_disagreement(
    tm,
    lm,
    src_ids,
    gold_tokens,
    mode: str = "postnorm",
    beta: float = 0.1,
    top_k: int = 5,
) -> list[StepTrace]:
    """Teacher-forced per-step comparison of TM, LM and fused distributions.

    Flags every position where fusion flips the TM argmax; this reproduces
    the failure mode where the product distribution overrides a correct
    translation-model prediction.
    """
    if mode not in ("shallow", "postnorm"):
        raise ConfigError("disagreement traces need a fusion mode (shallow/postnorm)")
    gold = np.asarray(gold_tokens, dtype=np.int64)
    if gold[0] != BOS:
        gold = np.concatenate([[BOS], gold])
    src_ids = np.atleast_2d(np.asarray(src_ids, dtype=np.int64))
    src_mask = np.ones_like(src_ids, dtype=bool)
    with ad.no_grad():
        tm_logits = tm.logits(src_ids, src_mask, gold[None, :-1]).data[0]
        lm_logits = lm.logits(gold[None, :-1]).data[0]
    tm_probs = softmax_array(tm_logits)
    lm_probs = softmax_array(lm_logits)
    traces = []
    for t in range(tm_probs.shape[0]):
        combined = step_score(
            mode, Distribution(tm_probs[t]), Distribution(lm_probs[t]), beta
        )
        combined_probs = softmax_array(combined)
        flip = int(combined_probs.argmax()) != int(tm_probs[t].argmax())
        traces.append(
            StepTrace(
                position=t,
                gold_id=int(gold[t + 1]),
                tm_top=_top_k(tm_probs[t], top_k),
                lm_top=_top_k(lm_probs[t], top_k),
                combined_top=_top_k(combined_probs, top_k),
                flip=flip,
            )
        )
    return traces
