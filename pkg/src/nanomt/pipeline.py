"""File-level orchestration: read corpora per the config, build tokenizers,
wire up frozen LM checkpoints, and run the training loops.

Tokenizer construction rule: the target tokenizer is trained on the target
side of the parallel data followed by the monolingual data (whichever are
configured). Both train-lm and train-tm apply the same rule to the same
config, so the LM and TM end up with an identical shared target vocabulary;
when a LM checkpoint is supplied, its embedded tokenizer is authoritative
and the hash check in the trainer enforces agreement.
"""

from __future__ import annotations

import os

from .checkpoint import Checkpoint, load_checkpoint
from .config import ExperimentConfig, write_resolved_config
from .data import filter_mono, filter_parallel, read_lines
from .errors import ConfigError, InvalidInputError
from .tokenizer import SubwordModel
from .training import LMPrior, TMData, TrainResult, train_lm, train_translator


def load_parallel(cfg: ExperimentConfig, split: str, filtered: bool) -> list[tuple[str, str]]:
    src_path = getattr(cfg, f"{split}_src")
    tgt_path = getattr(cfg, f"{split}_tgt")
    if not src_path or not tgt_path:
        raise ConfigError(f"config is missing {split}_src / {split}_tgt")
    src = read_lines(src_path, cfg.lowercase)
    tgt = read_lines(tgt_path, cfg.lowercase)
    if len(src) != len(tgt):
        raise InvalidInputError(
            f"{split}: {len(src)} source lines vs {len(tgt)} target lines"
        )
    pairs = list(zip(src, tgt))
    if filtered:
        pairs = filter_parallel(pairs, cfg.max_sent_words, cfg.max_len_ratio)
    return pairs


def load_mono(cfg: ExperimentConfig) -> list[str]:
    if not cfg.mono:
        raise ConfigError("config is missing a mono path")
    return filter_mono(read_lines(cfg.mono, cfg.lowercase), cfg.mono_max_words)


def split_lm_dev(lines: list[str], fraction: float) -> tuple[list[str], list[str]]:
    n_dev = max(1, int(len(lines) * fraction))
    if n_dev >= len(lines):
        raise InvalidInputError("not enough monolingual lines to hold out a dev set")
    return lines[:-n_dev], lines[-n_dev:]


def build_target_tokenizer(
    cfg: ExperimentConfig,
    parallel_tgt: list[str] | None,
    mono: list[str] | None,
) -> SubwordModel:
    corpus = list(parallel_tgt or []) + list(mono or [])
    if not corpus:
        raise ConfigError("no target-side text available to train a tokenizer")
    return SubwordModel.train(corpus, cfg.tgt_vocab_size, cfg.tokenizer_mode)


def _training_target_text(cfg: ExperimentConfig) -> list[str]:
    parallel_tgt = None
    if cfg.train_tgt:
        parallel_tgt = [t for _, t in load_parallel(cfg, "train", filtered=True)]
    mono = load_mono(cfg) if cfg.mono else None
    if parallel_tgt is None and mono is None:
        raise ConfigError("config has neither parallel nor monolingual target text")
    return list(parallel_tgt or []) + list(mono or [])


def run_train_lm(cfg: ExperimentConfig) -> TrainResult:
    mono = load_mono(cfg)
    train_lines, dev_lines = split_lm_dev(mono, cfg.lm_dev_fraction)
    parallel_tgt = None
    if cfg.train_tgt:
        parallel_tgt = [t for _, t in load_parallel(cfg, "train", filtered=True)]
    tokenizer = build_target_tokenizer(cfg, parallel_tgt, mono)
    write_resolved_config(cfg, cfg.out_dir)
    return train_lm(cfg, train_lines, dev_lines, tokenizer)


def load_prior(path: str) -> LMPrior:
    ckpt = load_checkpoint(path)
    if ckpt.kind != "lm":
        raise ConfigError(f"{path} is a {ckpt.kind!r} checkpoint, not a language model")
    model = ckpt.build_model()
    model.freeze()
    return LMPrior(model=model, tokenizer=ckpt.tokenizer("tgt"))


def run_train_tm(cfg: ExperimentConfig, warn) -> TrainResult:
    """Train a translation model from config paths.

    ``warn`` is called with a message for non-fatal surprises (an LM
    checkpoint supplied to an objective that ignores it).
    """
    from .objectives import needs_lm

    data = TMData(
        train_pairs=load_parallel(cfg, "train", filtered=True),
        dev_pairs=load_parallel(cfg, "dev", filtered=False),
    )
    prior = None
    if needs_lm(cfg.objective):
        if not cfg.lm_checkpoint:
            raise ConfigError(
                f"objective {cfg.objective!r} needs --lm-checkpoint (a frozen LM)"
            )
        prior = load_prior(cfg.lm_checkpoint)
        tgt_tok = prior.tokenizer
    else:
        if cfg.lm_checkpoint:
            warn(f"objective {cfg.objective!r} does not use the LM checkpoint; ignoring it")
        mono = load_mono(cfg) if cfg.mono else None
        tgt_tok = build_target_tokenizer(cfg, [t for _, t in data.train_pairs], mono)
    src_tok = SubwordModel.train(
        [s for s, _ in data.train_pairs], cfg.src_vocab_size, cfg.tokenizer_mode
    )
    write_resolved_config(cfg, cfg.out_dir)
    return train_translator(cfg, data, src_tok, tgt_tok, prior=prior)
