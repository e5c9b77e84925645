"""Probability-vector primitives shared by losses, decoding and analysis.

Everything here works on plain numpy arrays; the differentiable versions of
the same formulas live in the objectives module on top of autodiff ops. Both
routes are cross-checked in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import LOG_EPS
from .errors import InvalidInputError

PROB_TOL = 1e-6


@dataclass
class Distribution:
    """A probability vector over a vocabulary of size K.

    ``log_probs`` is computed lazily and cached; logs are floored at
    ``LOG_EPS`` so zero-probability entries stay finite.
    """

    probs: np.ndarray
    _log_probs: np.ndarray | None = None

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 1 or self.probs.size < 2:
            raise InvalidInputError("a Distribution needs a 1-d vector with K >= 2")
        if np.any(self.probs < 0):
            raise InvalidInputError("probabilities must be non-negative")
        if abs(self.probs.sum() - 1.0) > PROB_TOL:
            raise InvalidInputError(
                f"probabilities must sum to 1 (got {self.probs.sum():.8f})"
            )

    @property
    def size(self) -> int:
        return self.probs.size

    @property
    def log_probs(self) -> np.ndarray:
        if self._log_probs is None:
            self._log_probs = np.log(np.maximum(self.probs, LOG_EPS))
        return self._log_probs

    def argmax(self) -> int:
        return int(np.argmax(self.probs))


def softmax_array(logits: np.ndarray, tau: float = 1.0, axis: int = -1) -> np.ndarray:
    """Temperature softmax over an axis, stabilized by max subtraction."""
    logits = np.asarray(logits, dtype=np.float64)
    scaled = logits / tau
    shifted = scaled - scaled.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax_array(logits: np.ndarray, tau: float = 1.0, axis: int = -1) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    scaled = logits / tau
    shifted = scaled - scaled.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def softmax_with_temperature(logits, tau: float = 1.0) -> Distribution:
    """p_i = exp(s_i / tau) / sum_j exp(s_j / tau), for tau >= 1."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise InvalidInputError("logits must be finite")
    if tau < 1.0:
        raise InvalidInputError(f"temperature must be >= 1, got {tau}")
    return Distribution(softmax_array(logits, tau))


def entropy_array(probs: np.ndarray, axis: int = -1) -> np.ndarray:
    """Shannon entropy in nats along an axis, with 0*log(0) = 0."""
    probs = np.asarray(probs, dtype=np.float64)
    logs = np.where(probs > 0, np.log(np.maximum(probs, LOG_EPS)), 0.0)
    return -(probs * logs).sum(axis=axis)


def entropy(d: Distribution) -> float:
    return float(entropy_array(d.probs))


def kl_array(p: np.ndarray, q: np.ndarray, axis: int = -1) -> np.ndarray:
    """KL(p || q) in nats along an axis, with q floored at LOG_EPS.

    Terms with p_i = 0 contribute nothing regardless of q_i.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    log_ratio = np.log(np.maximum(p, LOG_EPS)) - np.log(np.maximum(q, LOG_EPS))
    return (np.where(p > 0, p * log_ratio, 0.0)).sum(axis=axis)


def kl_divergence(p: Distribution, q: Distribution) -> float:
    if p.size != q.size:
        raise InvalidInputError(
            f"distributions have different sizes: {p.size} vs {q.size}"
        )
    return float(kl_array(p.probs, q.probs))


def renormalized_product(p: np.ndarray, q: np.ndarray, axis: int = -1) -> np.ndarray:
    """Elementwise product of two probability arrays, renormalized.

    Computed in log space so very small entries survive; equals
    softmax(log p + log q) along the axis.
    """
    logs = np.log(np.maximum(p, LOG_EPS)) + np.log(np.maximum(q, LOG_EPS))
    return softmax_array(logs, axis=axis)
