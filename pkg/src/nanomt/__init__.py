"""nanomt: a CPU-scale neural machine translation laboratory.

Trains a translation model regularized toward a frozen language-model prior
(a temperature-scaled KL term on the output distributions) next to its
baselines: maximum likelihood, label smoothing, shallow fusion and the
postnorm product of experts. Ships the analyses that compare them: BLEU,
perplexity, output-entropy histograms, fusion disagreement traces and
regularizer sensitivity grids.
"""

from .autodiff import Tensor, backward, no_grad
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, load_config
from .decoding import FusionScorer, Hypothesis, beam_search, greedy_decode_batch, trace_disagreement
from .errors import ConfigError, InvalidInputError, NanomtError, TrainingError
from .estimators import LanguageModelEstimator, SubwordTokenizer, TranslationEstimator
from .metrics import BleuScore, EntropyProfile, corpus_bleu, entropy_profile, perplexity
from .models import ArchConfig, TransformerLM, TransformerTranslator
from .objectives import (
    LossBreakdown,
    compute_loss,
    label_smoothed_targets,
    lm_prior_loss,
    mle_loss,
    postnorm_train_loss,
)
from .probability import Distribution, entropy, kl_divergence, softmax_with_temperature
from .sweep import SensitivityGrid, sensitivity_sweep
from .tokenizer import SubwordModel, Vocabulary, train_subword_model
from .training import AdamState, LMPrior, TMData, TrainResult, adam_step, lr_schedule, train_lm, train_translator

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "ArchConfig",
    "BleuScore",
    "Checkpoint",
    "ConfigError",
    "Distribution",
    "EntropyProfile",
    "ExperimentConfig",
    "FusionScorer",
    "Hypothesis",
    "InvalidInputError",
    "LMPrior",
    "LanguageModelEstimator",
    "LossBreakdown",
    "NanomtError",
    "SensitivityGrid",
    "SubwordModel",
    "SubwordTokenizer",
    "TMData",
    "Tensor",
    "TrainResult",
    "TrainingError",
    "TransformerLM",
    "TransformerTranslator",
    "TranslationEstimator",
    "Vocabulary",
    "adam_step",
    "backward",
    "beam_search",
    "compute_loss",
    "corpus_bleu",
    "entropy",
    "entropy_profile",
    "greedy_decode_batch",
    "kl_divergence",
    "label_smoothed_targets",
    "lm_prior_loss",
    "load_checkpoint",
    "load_config",
    "lr_schedule",
    "mle_loss",
    "no_grad",
    "perplexity",
    "postnorm_train_loss",
    "save_checkpoint",
    "sensitivity_sweep",
    "softmax_with_temperature",
    "trace_disagreement",
    "train_lm",
    "train_subword_model",
    "train_translator",
]
