"""Shared test utilities: finite-difference gradient checking and tiny
deterministic scoring models for decoder tests."""

from __future__ import annotations

import numpy as np

from nanomt import autodiff as ad
from nanomt.autodiff import Tensor
from nanomt.probability import log_softmax_array
from nanomt.tokenizer import BOS, EOS


def finite_difference_grads(loss_fn, param: Tensor, indices, h: float = 1e-4) -> dict:
    """Central-difference gradients of loss_fn() w.r.t. selected entries."""
    grads = {}
    for idx in indices:
        original = param.data[idx]
        param.data[idx] = original + h
        up = float(loss_fn().data)
        param.data[idx] = original - h
        down = float(loss_fn().data)
        param.data[idx] = original
        grads[idx] = (up - down) / (2.0 * h)
    return grads


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))


def gradcheck(
    loss_fn,
    params: dict[str, Tensor],
    rng: np.random.Generator,
    samples_per_param: int = 25,
    h: float = 1e-4,
    tol: float = 1e-4,
) -> float:
    """Check sampled entries of every parameter against central differences.

    Returns the worst relative error seen; asserts it is under ``tol``.
    Parameters must be float64 for the tolerance to be meaningful.
    """
    loss = loss_fn()
    grads = ad.backward(loss)
    for p in params.values():
        p.grad = None
    worst = 0.0
    for name, param in sorted(params.items()):
        if not param.requires_grad:
            continue
        assert name in grads, f"no gradient reached parameter {name}"
        flat = param.data.reshape(-1)
        n = min(samples_per_param, flat.size)
        chosen = rng.choice(flat.size, size=n, replace=False)
        indices = [np.unravel_index(i, param.data.shape) for i in chosen]
        numeric = finite_difference_grads(loss_fn, param, indices, h)
        for idx in indices:
            err = relative_error(float(grads[name][idx]), numeric[idx])
            worst = max(worst, err)
            assert err < tol, (
                f"gradient mismatch for {name}{idx}: "
                f"analytic {grads[name][idx]:.10f} vs numeric {numeric[idx]:.10f}"
            )
    return worst


class TableModel:
    """Deterministic toy scorer: log probabilities depend on the prefix via a
    seeded hash, so exhaustive search and beam search see identical scores."""

    def __init__(self, vocab_size: int, seed: int, scale: float = 1.0):
        self.vocab_size = vocab_size
        self.seed = seed
        self.scale = scale
        self._cache: dict[tuple[int, ...], np.ndarray] = {}

    def _row(self, prefix: tuple[int, ...]) -> np.ndarray:
        if prefix not in self._cache:
            key = abs(hash((self.seed,) + prefix)) % (2**32)
            logits = np.random.default_rng(key).normal(0.0, self.scale, self.vocab_size)
            self._cache[prefix] = log_softmax_array(logits)
        return self._cache[prefix]

    def next_log_probs(self, prefixes: np.ndarray, rows=None) -> np.ndarray:
        return np.stack([self._row(tuple(int(t) for t in p)) for p in np.asarray(prefixes)])


class TableLM(TableModel):
    """Same thing with the LM stepper call signature (no rows argument)."""

    def __init__(self, vocab_size: int, seed: int, scale: float = 1.0):
        super().__init__(vocab_size, seed, scale)
        self.calls = 0

    def next_log_probs(self, prefixes: np.ndarray) -> np.ndarray:
        self.calls += 1
        return super().next_log_probs(prefixes)


def exhaustive_best(model, scorer, max_len: int, length_normalize: bool = True):
    """Brute-force search over every EOS-terminated sequence up to max_len.

    Scores every sequence with the same stepper/scorer the beam uses and
    returns (tokens, raw score) of the best finished sequence under the
    beam's final comparison rule.
    """
    best = None

    def visit(prefix: list[int], score: float, t: int):
        nonlocal best
        lp = scorer.combine(
            model.next_log_probs(np.asarray([prefix]), np.zeros(1, dtype=int)),
            np.asarray([prefix]),
        )[0]
        choices = [EOS] if t == max_len else range(len(lp))
        for k in choices:
            s = score + float(lp[k])
            if k == EOS:
                tokens = tuple(prefix + [EOS])
                length = len(tokens) - 1
                rank = (-(s / length) if length_normalize else -s, tokens)
                if best is None or rank < best[0]:
                    best = (rank, tokens, s)
            elif t < max_len:
                visit(prefix + [k], s, t + 1)

    visit([BOS], 0.0, 1)
    return list(best[1]), best[2]
