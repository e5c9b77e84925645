"""Training objectives: maximum likelihood, label smoothing, the LM-prior
KL regularizer, and the postnorm product-of-experts objective.

All losses are means over non-pad target tokens. The prior and postnorm
objectives consume frozen LM probabilities as plain arrays, so no gradient
can reach the LM. Temperature applies only inside the KL term; the
translation term is always computed from temperature-1 logits, and the KL
value is scaled by tau^2 so its magnitude stays comparable across
temperatures.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import LOG_EPS, Tensor
from .errors import ConfigError, InvalidInputError

OBJECTIVES = ("mle", "ls", "prior", "prior+ls", "postnorm", "postnorm+ls")


@dataclass
class LossBreakdown:
    """Total objective plus its translation and regularization parts.

    ``total`` stays a Tensor so it can be backpropagated; the reported terms
    are plain floats. When the prior is active,
    total == mt_term + weight * kl_term.
    """

    total: Tensor
    mt_term: float
    kl_term: float
    token_count: int


def _check_batch(logits: Tensor, gold: np.ndarray, mask: np.ndarray) -> int:
    if logits.shape[:-1] != gold.shape or gold.shape != mask.shape:
        raise InvalidInputError("logits, gold and mask shapes do not line up")
    count = int(mask.sum())
    if count == 0:
        raise InvalidInputError("batch contains no unmasked tokens")
    return count


def _masked_token_mean(per_token: Tensor, mask: np.ndarray, count: int) -> Tensor:
    kept = ad.mul(per_token, mask.astype(per_token.dtype))
    return ad.mul(ad.tensor_sum(kept), 1.0 / count)


def _nll(log_probs: Tensor, gold: np.ndarray, mask: np.ndarray, count: int) -> Tensor:
    picked = ad.take_along_last(log_probs, gold)
    return _masked_token_mean(ad.mul(picked, -1.0), mask, count)


def _smoothed_ce(
    log_probs: Tensor, gold: np.ndarray, mask: np.ndarray, count: int, alpha: float
) -> Tensor:
    """Cross-entropy against (1-alpha) * one_hot + alpha / K."""
    k = log_probs.shape[-1]
    gold_term = ad.mul(ad.take_along_last(log_probs, gold), -(1.0 - alpha))
    uniform_term = ad.mul(ad.tensor_sum(log_probs, axis=-1), -(alpha / k))
    return _masked_token_mean(ad.add(gold_term, uniform_term), mask, count)


def label_smoothed_targets(one_hot: np.ndarray, alpha: float, k: int) -> np.ndarray:
    """y_i (1 - alpha) + alpha / K; the soft target label smoothing trains on."""
    if not 0.0 <= alpha < 1.0:
        raise ConfigError(f"smoothing alpha must be in [0, 1), got {alpha}")
    one_hot = np.asarray(one_hot, dtype=np.float64)
    return one_hot * (1.0 - alpha) + alpha / k


def mle_loss(tm_logits: Tensor, gold: np.ndarray, mask: np.ndarray) -> LossBreakdown:
    """Mean negative log-likelihood of the gold tokens."""
    count = _check_batch(tm_logits, gold, mask)
    nll = _nll(ad.log_softmax(tm_logits), gold, mask, count)
    return LossBreakdown(nll, float(nll.data), 0.0, count)


def label_smoothing_loss(
    tm_logits: Tensor, gold: np.ndarray, mask: np.ndarray, alpha: float
) -> LossBreakdown:
    if alpha == 0.0:
        return mle_loss(tm_logits, gold, mask)
    if not 0.0 <= alpha < 1.0:
        raise ConfigError(f"smoothing alpha must be in [0, 1), got {alpha}")
    count = _check_batch(tm_logits, gold, mask)
    ce = _smoothed_ce(ad.log_softmax(tm_logits), gold, mask, count, alpha)
    return LossBreakdown(ce, float(ce.data), 0.0, count)


def _lm_probs_at_tau(lm_logits: np.ndarray, tau: float) -> np.ndarray:
    scaled = np.asarray(lm_logits, dtype=np.float64) / tau
    shifted = scaled - scaled.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def lm_prior_loss(
    tm_logits: Tensor,
    lm_logits: np.ndarray,
    gold: np.ndarray,
    mask: np.ndarray,
    weight: float,
    tau: float,
    alpha: float = 0.0,
) -> LossBreakdown:
    """Translation loss plus weight * tau^2 * KL(p_LM(tau) || p_TM(tau)).

    The LM enters as raw logits of the frozen prior; only the TM logits carry
    gradients. With weight == 0 the result is exactly the (smoothed) MLE loss.
    """
    if tau < 1.0:
        raise ConfigError(f"temperature must be >= 1, got {tau}")
    base = label_smoothing_loss(tm_logits, gold, mask, alpha)
    if weight == 0.0:
        return base
    if lm_logits is None:
        raise ConfigError("the prior objective needs LM logits")
    if tuple(lm_logits.shape) != tuple(tm_logits.shape):
        raise ConfigError(
            f"LM and TM vocabularies disagree: {lm_logits.shape} vs {tm_logits.shape}"
        )
    count = base.token_count
    p_lm = _lm_probs_at_tau(lm_logits, tau).astype(tm_logits.dtype)
    lm_log = np.log(np.maximum(p_lm, LOG_EPS))
    tm_log_tau = ad.log_softmax(ad.mul(tm_logits, 1.0 / tau))
    # sum_i p_lm (log p_lm - log p_tm), per token
    per_token = ad.tensor_sum(ad.mul(ad.sub(Tensor(lm_log), tm_log_tau), Tensor(p_lm)), axis=-1)
    kl = ad.mul(_masked_token_mean(per_token, mask, count), tau * tau)
    total = ad.add(base.total, ad.mul(kl, weight))
    return LossBreakdown(total, base.mt_term, float(kl.data), count)


def postnorm_train_loss(
    tm_logits: Tensor,
    lm_logits: np.ndarray,
    gold: np.ndarray,
    mask: np.ndarray,
    alpha: float = 0.0,
) -> LossBreakdown:
    """NLL of gold under softmax(log p_TM + log p_LM).

    The combined distribution is the renormalized elementwise product of the
    two model distributions, used at training time (and again at decode time
    by the postnorm fusion scorer).
    """
    if lm_logits is None:
        raise ConfigError("the postnorm objective needs LM logits")
    if tuple(lm_logits.shape) != tuple(tm_logits.shape):
        raise ConfigError(
            f"LM and TM vocabularies disagree: {lm_logits.shape} vs {tm_logits.shape}"
        )
    count = _check_batch(tm_logits, gold, mask)
    p_lm = _lm_probs_at_tau(lm_logits, 1.0).astype(tm_logits.dtype)
    lm_log = np.log(np.maximum(p_lm, LOG_EPS))
    combined = ad.log_softmax(ad.add(ad.log_softmax(tm_logits), Tensor(lm_log)))
    if alpha > 0.0:
        ce = _smoothed_ce(combined, gold, mask, count, alpha)
    else:
        ce = _nll(combined, gold, mask, count)
    return LossBreakdown(ce, float(ce.data), 0.0, count)


def compute_loss(
    objective: str,
    tm_logits: Tensor,
    gold: np.ndarray,
    mask: np.ndarray,
    lm_logits: np.ndarray | None = None,
    weight: float = 0.5,
    tau: float = 2.0,
    alpha: float = 0.1,
) -> LossBreakdown:
    """Dispatch on the configured objective name."""
    if objective == "mle":
        return mle_loss(tm_logits, gold, mask)
    if objective == "ls":
        return label_smoothing_loss(tm_logits, gold, mask, alpha)
    if objective == "prior":
        return lm_prior_loss(tm_logits, lm_logits, gold, mask, weight, tau, 0.0)
    if objective == "prior+ls":
        return lm_prior_loss(tm_logits, lm_logits, gold, mask, weight, tau, alpha)
    if objective == "postnorm":
        return postnorm_train_loss(tm_logits, lm_logits, gold, mask, 0.0)
    if objective == "postnorm+ls":
        return postnorm_train_loss(tm_logits, lm_logits, gold, mask, alpha)
    raise ConfigError(f"unknown objective {objective!r} (expected one of {OBJECTIVES})")


def needs_lm(objective: str) -> bool:
    return objective in ("prior", "prior+ls", "postnorm", "postnorm+ls")
