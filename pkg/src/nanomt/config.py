"""Experiment configuration: a flat key=value file plus CLI overrides.

Every field has a default, unknown keys are rejected, and the fully resolved
configuration is written next to a run's outputs so any experiment can be
reproduced from that single file.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields

from .errors import ConfigError

# One-line documentation per field; doubles as the template text for new
# config files.
FIELD_HELP = {
    "train_src": "path to training source sentences (one per line)",
    "train_tgt": "path to training target sentences, aligned with train_src",
    "dev_src": "path to development source sentences",
    "dev_tgt": "path to development target sentences",
    "test_src": "path to test source sentences",
    "test_tgt": "path to test target sentences",
    "mono": "path to target-side monolingual sentences (LM training data)",
    "out_dir": "directory for checkpoints, logs and the resolved config",
    "lowercase": "lowercase all text at ingestion",
    "tokenizer_mode": "subword scheme: bpe or char",
    "src_vocab_size": "maximum source vocabulary size (specials included)",
    "tgt_vocab_size": "maximum target vocabulary size, shared by TM and LM",
    "max_sent_words": "parallel filter: drop pairs with a side longer than this many words",
    "max_len_ratio": "parallel filter: drop pairs whose word-count ratio exceeds this",
    "mono_max_words": "monolingual filter: drop lines longer than this many words",
    "n_layers": "transformer layers per stack (full-scale reference: 6)",
    "d_model": "model width (full-scale reference: 512)",
    "n_heads": "attention heads (full-scale reference: 8)",
    "d_ff": "feed-forward width (full-scale reference: 2048)",
    "dropout": "dropout rate (full-scale reference: 0.3; off at toy scale)",
    "precision": "float32 for training, float64 for numeric checks",
    "objective": "mle | ls | prior | prior+ls | postnorm | postnorm+ls",
    "lam": "weight of the KL regularizer toward the frozen LM",
    "tau": "softmax temperature used only inside the KL term (>= 1)",
    "alpha": "label-smoothing mass spread over the vocabulary",
    "beta": "shallow-fusion interpolation weight at decode time",
    "lr": "peak Adam learning rate (full-scale reference: 0.0002)",
    "warmup_steps": "linear warmup length; inverse-sqrt decay afterwards "
    "(full-scale reference: 8000)",
    "adam_beta1": "Adam first-moment decay",
    "adam_beta2": "Adam second-moment decay",
    "adam_eps": "Adam denominator epsilon",
    "clip_norm": "global gradient-norm clip; 0 disables",
    "tokens_per_batch": "token budget per batch (full-scale reference: 5000)",
    "max_steps": "hard cap on optimizer steps",
    "eval_every": "evaluate on dev every this many batches "
    "(full-scale reference: 5000)",
    "patience": "stop after this many evaluations without improvement",
    "lm_dev_fraction": "fraction of monolingual data held out for LM early stopping",
    "beam_size": "beam width for test decoding (dev decoding is greedy)",
    "length_normalize": "compare finished beam hypotheses by score/length",
    "max_decode_factor": "decode length budget: factor * source length + extra",
    "max_decode_extra": "decode length budget: factor * source length + extra",
    "seed": "master seed; init/shuffle/toygen/dropout streams derive from it",
    "lm_checkpoint": "frozen LM checkpoint (required for prior/postnorm objectives)",
}


@dataclass
class ExperimentConfig:
    # data
    train_src: str = ""
    train_tgt: str = ""
    dev_src: str = ""
    dev_tgt: str = ""
    test_src: str = ""
    test_tgt: str = ""
    mono: str = ""
    out_dir: str = "run"
    lowercase: bool = False
    # tokenizer
    tokenizer_mode: str = "bpe"
    src_vocab_size: int = 2000
    tgt_vocab_size: int = 2000
    # corpus filtering
    max_sent_words: int = 60
    max_len_ratio: float = 1.5
    mono_max_words: int = 50
    # architecture (toy scale)
    n_layers: int = 2
    d_model: int = 64
    n_heads: int = 2
    d_ff: int = 128
    dropout: float = 0.0
    precision: str = "float32"
    # objective
    objective: str = "mle"
    lam: float = 0.5
    tau: float = 2.0
    alpha: float = 0.1
    beta: float = 0.1
    # optimization
    lr: float = 0.001
    warmup_steps: int = 200
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 1.0
    tokens_per_batch: int = 512
    max_steps: int = 4000
    eval_every: int = 200
    patience: int = 10
    lm_dev_fraction: float = 0.1
    # decoding
    beam_size: int = 5
    length_normalize: bool = True
    max_decode_factor: float = 2.0
    max_decode_extra: int = 10
    # reproducibility
    seed: int = 0
    lm_checkpoint: str = ""

    def validate(self) -> "ExperimentConfig":
        if self.objective not in ("mle", "ls", "prior", "prior+ls", "postnorm", "postnorm+ls"):
            raise ConfigError(f"unknown objective {self.objective!r}")
        if self.tokenizer_mode not in ("bpe", "char"):
            raise ConfigError(f"unknown tokenizer_mode {self.tokenizer_mode!r}")
        if self.tau < 1.0:
            raise ConfigError(f"tau must be >= 1, got {self.tau}")
        if not 0.0 <= self.alpha < 1.0:
            raise ConfigError(f"alpha must be in [0, 1), got {self.alpha}")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must be in [0, 1], got {self.beta}")
        if self.lam < 0.0:
            raise ConfigError(f"lam must be >= 0, got {self.lam}")
        if not 0.0 < self.lm_dev_fraction < 1.0:
            raise ConfigError("lm_dev_fraction must be in (0, 1)")
        return self

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw).validate()


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def _coerce(name: str, raw: str):
    f = _FIELDS[name]
    if f.type == "bool" or isinstance(f.default, bool):
        low = raw.strip().lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ConfigError(f"cannot parse boolean {name}={raw!r}")
    try:
        if isinstance(f.default, int) and not isinstance(f.default, bool):
            return int(raw)
        if isinstance(f.default, float):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {name}={raw!r}: {exc}") from None
    return raw


def parse_overrides(pairs: list[str]) -> dict:
    """Parse repeated key=value strings (CLI --set flags)."""
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not key=value")
        key, value = pair.split("=", 1)
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        out[key] = _coerce(key, value)
    return out


def load_config(path: str | None = None, overrides: dict | None = None) -> ExperimentConfig:
    values: dict = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                stripped = line.strip()
                if not stripped or stripped.startswith("#"):
                    continue
                if "=" not in stripped:
                    raise ConfigError(f"{path}:{lineno}: expected key = value")
                key, value = stripped.split("=", 1)
                key = key.strip()
                if key not in _FIELDS:
                    raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
                values[key] = _coerce(key, value.strip())
    if overrides:
        values.update(overrides)
    return ExperimentConfig(**values).validate()


def config_text(cfg: ExperimentConfig) -> str:
    lines = []
    for f in fields(ExperimentConfig):
        doc = FIELD_HELP.get(f.name, "")
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"# {doc}")
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def write_resolved_config(cfg: ExperimentConfig, out_dir: str) -> str:
    """Persist the fully resolved configuration for provenance."""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "config.resolved.txt")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(config_text(cfg))
    return path
