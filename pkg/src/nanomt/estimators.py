"""scikit-learn style wrappers so the pieces compose with the wider
ecosystem: the tokenizer is a fit/transform transformer and the two models
are fit/predict estimators. All heavy lifting stays in the library modules;
these classes only adapt interfaces, validate inputs and manage run
directories.
"""

from __future__ import annotations

import tempfile

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .config import ExperimentConfig
from .data import filter_mono, filter_parallel
from .decoding import FusionScorer, LMStepper, greedy_decode_batch
from .data import _pad_rows, Batch, encode_mono
from .errors import InvalidInputError
from .metrics import corpus_bleu, perplexity
from .tokenizer import SubwordModel
from .training import LMPrior, TMData, train_lm, train_translator


def ensure_text_list(X, name: str = "X") -> list[str]:
    """Validate a 1-d collection of strings (the estimator input format)."""
    if isinstance(X, str):
        raise InvalidInputError(f"{name} must be a list of strings, not one string")
    items = list(X)
    for item in items:
        if not isinstance(item, str):
            raise InvalidInputError(f"{name} must contain only strings, got {type(item)!r}")
    if not items:
        raise InvalidInputError(f"{name} is empty")
    return items


def ensure_parallel(X, y) -> list[tuple[str, str]]:
    src = ensure_text_list(X, "X")
    tgt = ensure_text_list(y, "y")
    if len(src) != len(tgt):
        raise InvalidInputError(f"X and y lengths differ: {len(src)} vs {len(tgt)}")
    return list(zip(src, tgt))


def _check_fitted(estimator, attr: str):
    if getattr(estimator, attr, None) is None:
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call fit() first"
        )


class SubwordTokenizer(TransformerMixin, BaseEstimator):
    """Fit a subword model on raw lines; transform lines to id lists."""

    def __init__(self, vocab_size: int = 2000, mode: str = "bpe", lowercase: bool = False):
        self.vocab_size = vocab_size
        self.mode = mode
        self.lowercase = lowercase

    def _prep(self, X) -> list[str]:
        lines = ensure_text_list(X)
        return [l.lower() for l in lines] if self.lowercase else lines

    def fit(self, X, y=None):
        self.model_ = SubwordModel.train(self._prep(X), self.vocab_size, self.mode)
        return self

    def transform(self, X) -> list[list[int]]:
        _check_fitted(self, "model_")
        return [self.model_.encode(line) for line in self._prep(X)]

    def inverse_transform(self, ids) -> list[str]:
        _check_fitted(self, "model_")
        return [self.model_.decode(row) for row in ids]

    @property
    def vocabulary_(self):
        _check_fitted(self, "model_")
        return self.model_.vocab


class _ConfiguredEstimator(BaseEstimator):
    """Shared config plumbing: every __init__ parameter that matches an
    ExperimentConfig field is forwarded into the run config."""

    def _config(self, **extra) -> ExperimentConfig:
        params = {
            k: v
            for k, v in self.get_params(deep=False).items()
            if k in ExperimentConfig.__dataclass_fields__
        }
        params.update(extra)
        return ExperimentConfig(**params).validate()

    def _run_dir(self) -> str:
        if getattr(self, "out_dir", None):
            return self.out_dir
        return tempfile.mkdtemp(prefix=f"nanomt-{type(self).__name__}-")


class LanguageModelEstimator(_ConfiguredEstimator):
    """Autoregressive subword language model with a fit/perplexity API."""

    def __init__(
        self,
        tgt_vocab_size: int = 2000,
        tokenizer_mode: str = "bpe",
        lowercase: bool = False,
        n_layers: int = 2,
        d_model: int = 64,
        n_heads: int = 2,
        d_ff: int = 128,
        dropout: float = 0.0,
        lr: float = 0.001,
        warmup_steps: int = 200,
        tokens_per_batch: int = 512,
        max_steps: int = 2000,
        eval_every: int = 200,
        patience: int = 10,
        lm_dev_fraction: float = 0.1,
        mono_max_words: int = 50,
        seed: int = 0,
        out_dir: str | None = None,
    ):
        self.tgt_vocab_size = tgt_vocab_size
        self.tokenizer_mode = tokenizer_mode
        self.lowercase = lowercase
        self.n_layers = n_layers
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_ff = d_ff
        self.dropout = dropout
        self.lr = lr
        self.warmup_steps = warmup_steps
        self.tokens_per_batch = tokens_per_batch
        self.max_steps = max_steps
        self.eval_every = eval_every
        self.patience = patience
        self.lm_dev_fraction = lm_dev_fraction
        self.mono_max_words = mono_max_words
        self.seed = seed
        self.out_dir = out_dir

    def fit(self, X, y=None):
        lines = ensure_text_list(X)
        if self.lowercase:
            lines = [l.lower() for l in lines]
        lines = filter_mono(lines, self.mono_max_words)
        cfg = self._config(lowercase=self.lowercase)
        n_dev = max(1, int(len(lines) * cfg.lm_dev_fraction))
        if n_dev >= len(lines):
            raise InvalidInputError("too few lines to hold out a dev split")
        tokenizer = SubwordModel.train(lines, cfg.tgt_vocab_size, cfg.tokenizer_mode)
        result = train_lm(cfg, lines[:-n_dev], lines[-n_dev:], tokenizer, out_dir=self._run_dir())
        self.model_ = result.model
        self.tokenizer_ = tokenizer
        self.result_ = result
        return self

    def _batches(self, X) -> list[Batch]:
        lines = ensure_text_list(X)
        if self.lowercase:
            lines = [l.lower() for l in lines]
        rows = encode_mono(lines, self.tokenizer_)
        return [
            Batch(*_pad_rows(rows[i : i + 64]), token_count=0)
            for i in range(0, len(rows), 64)
        ]

    def perplexity(self, X) -> float:
        _check_fitted(self, "model_")
        return perplexity(self.model_, self._batches(X))

    def score(self, X, y=None) -> float:
        """Higher is better (sklearn convention): negative mean NLL."""
        return -float(np.log(self.perplexity(X)))


class TranslationEstimator(_ConfiguredEstimator):
    """Encoder-decoder translation model; objective and regularizer weights
    are constructor parameters, an optional fitted LanguageModelEstimator
    supplies the frozen prior."""

    def __init__(
        self,
        objective: str = "mle",
        lam: float = 0.5,
        tau: float = 2.0,
        alpha: float = 0.1,
        lm: LanguageModelEstimator | None = None,
        src_vocab_size: int = 2000,
        tgt_vocab_size: int = 2000,
        tokenizer_mode: str = "bpe",
        lowercase: bool = False,
        n_layers: int = 2,
        d_model: int = 64,
        n_heads: int = 2,
        d_ff: int = 128,
        dropout: float = 0.0,
        lr: float = 0.001,
        warmup_steps: int = 200,
        tokens_per_batch: int = 512,
        max_steps: int = 2000,
        eval_every: int = 200,
        patience: int = 10,
        max_sent_words: int = 60,
        max_len_ratio: float = 1.5,
        dev_fraction: float = 0.1,
        seed: int = 0,
        out_dir: str | None = None,
    ):
        self.objective = objective
        self.lam = lam
        self.tau = tau
        self.alpha = alpha
        self.lm = lm
        self.src_vocab_size = src_vocab_size
        self.tgt_vocab_size = tgt_vocab_size
        self.tokenizer_mode = tokenizer_mode
        self.lowercase = lowercase
        self.n_layers = n_layers
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_ff = d_ff
        self.dropout = dropout
        self.lr = lr
        self.warmup_steps = warmup_steps
        self.tokens_per_batch = tokens_per_batch
        self.max_steps = max_steps
        self.eval_every = eval_every
        self.patience = patience
        self.max_sent_words = max_sent_words
        self.max_len_ratio = max_len_ratio
        self.dev_fraction = dev_fraction
        self.seed = seed
        self.out_dir = out_dir

    def fit(self, X, y, dev=None):
        """Train on parallel lines. ``dev`` is an optional (X_dev, y_dev)
        pair; without it the tail of the training data is held out."""
        pairs = filter_parallel(ensure_parallel(X, y), self.max_sent_words, self.max_len_ratio)
        if self.lowercase:
            pairs = [(s.lower(), t.lower()) for s, t in pairs]
        if dev is not None:
            dev_pairs = ensure_parallel(*dev)
        else:
            n_dev = max(1, int(len(pairs) * self.dev_fraction))
            if n_dev >= len(pairs):
                raise InvalidInputError("too few pairs to hold out a dev split")
            pairs, dev_pairs = pairs[:-n_dev], pairs[-n_dev:]
        cfg = self._config(lowercase=self.lowercase)

        prior = None
        if self.lm is not None:
            _check_fitted(self.lm, "model_")
            prior = LMPrior(model=self.lm.model_, tokenizer=self.lm.tokenizer_)
            tgt_tok = self.lm.tokenizer_
        else:
            tgt_tok = SubwordModel.train(
                [t for _, t in pairs], cfg.tgt_vocab_size, cfg.tokenizer_mode
            )
        src_tok = SubwordModel.train([s for s, _ in pairs], cfg.src_vocab_size, cfg.tokenizer_mode)
        result = train_translator(
            cfg, TMData(pairs, dev_pairs), src_tok, tgt_tok, prior=prior, out_dir=self._run_dir()
        )
        self.model_ = result.model
        self.src_tokenizer_ = src_tok
        self.tgt_tokenizer_ = tgt_tok
        self.result_ = result
        return self

    def predict(self, X) -> list[str]:
        """Greedy translations (the postnorm objective decodes with its
        product scorer, matching how it was trained)."""
        _check_fitted(self, "model_")
        lines = ensure_text_list(X)
        if self.lowercase:
            lines = [l.lower() for l in lines]
        rows = [np.asarray(self.src_tokenizer_.encode(l) or [0], dtype=np.int64) for l in lines]
        scorer = FusionScorer()
        if self.objective.startswith("postnorm"):
            scorer = FusionScorer("postnorm", lm=LMStepper(self.lm.model_))
        out = []
        for i in range(0, len(rows), 64):
            src_ids, src_mask = _pad_rows(rows[i : i + 64])
            decoded = greedy_decode_batch(self.model_, src_ids, src_mask, scorer)
            out.extend(self.tgt_tokenizer_.decode(tokens) for tokens in decoded)
        return out

    def score(self, X, y) -> float:
        """Corpus BLEU (0..100) of predictions against references."""
        refs = ensure_text_list(y, "y")
        if self.lowercase:
            refs = [r.lower() for r in refs]
        return corpus_bleu(self.predict(X), refs).score
