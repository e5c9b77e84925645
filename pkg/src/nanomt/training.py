"""Optimization: Adam with warmup + inverse-sqrt decay, dev-metric early
stopping, atomic checkpointing and an append-only metrics CSV.

Metrics CSV columns (stable order):
    step, lr, loss_total, loss_mt, loss_kl, dev_bleu, dev_ppl, mean_entropy
Loss columns are running means since the previous evaluation. ``dev_bleu``
is empty for language-model runs, whose early-stopping metric is dev
perplexity.

Training is single-threaded and fully determined by (config, seed): batch
order comes from the per-epoch shuffle stream and dropout from a per-step
stream, so a run can be stopped, serialized and resumed bitwise.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import load_checkpoint, save_checkpoint, vocab_hash
from .config import ExperimentConfig
from .data import Batch, ParallelCorpus, encode_mono, encode_parallel, make_batches, _pad_rows
from .decoding import FusionScorer, LMStepper, greedy_decode_batch
from .errors import ConfigError, InvalidInputError, TrainingError
from .metrics import corpus_bleu, entropy_profile, perplexity
from .models import ArchConfig, TransformerLM, TransformerTranslator
from .objectives import LossBreakdown, compute_loss, needs_lm
from .seeding import stream_rng, stream_seed
from .tokenizer import SubwordModel

CSV_HEADER = "step,lr,loss_total,loss_mt,loss_kl,dev_bleu,dev_ppl,mean_entropy"


def lr_schedule(step: int, base: float = 0.0002, warmup: int = 8000) -> float:
    """Linear warmup to ``base`` over ``warmup`` steps, then inverse-sqrt decay."""
    if step < 1:
        raise InvalidInputError(f"schedule step must be >= 1, got {step}")
    return base * min(step / warmup, math.sqrt(warmup / step))


@dataclass
class AdamState:
    """Bias-corrected Adam moments, one pair of arrays per parameter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> None:
    """One Adam update; aborts with the parameter name on non-finite grads."""
    state.step += 1
    t = state.step
    for name in sorted(grads):
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise TrainingError(
                f"non-finite gradient for parameter {name!r} at Adam step {t}"
            )
        p = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so the global L2 norm is at most ``max_norm``.

    Scaling is uniform, so the update direction is unchanged. Returns the
    pre-clip norm. ``max_norm <= 0`` disables clipping.
    """
    norm = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


@dataclass
class LMPrior:
    """A frozen language model plus the tokenizer it was trained with."""

    model: TransformerLM
    tokenizer: SubwordModel


@dataclass
class TMData:
    train_pairs: list[tuple[str, str]]
    dev_pairs: list[tuple[str, str]]


@dataclass
class TrainResult:
    model: object
    tokenizers: dict[str, SubwordModel]
    best_metric: float
    best_step: int
    steps: int
    evals: int
    history: list[tuple[int, float]]
    checkpoint_path: str
    log_path: str


@dataclass
class TrainState:
    """Everything needed to resume a run bitwise: parameters, Adam moments
    and the loop counters. RNG streams are derived from (seed, step/epoch),
    so no generator state needs to be stored."""

    adam: AdamState
    step: int
    best_metric: float
    best_step: int
    evals_since_improve: int
    evals: int
    history: list[tuple[int, float]]


def save_train_state(path: str, model, state: TrainState) -> None:
    import json

    meta = {
        "step": state.step,
        "adam_step": state.adam.step,
        "best_metric": state.best_metric,
        "best_step": state.best_step,
        "evals_since_improve": state.evals_since_improve,
        "evals": state.evals,
        "history": state.history,
        "betas": [state.adam.beta1, state.adam.beta2, state.adam.eps],
    }
    arrays = {"__meta__": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)}
    for name, p in model.params.items():
        arrays[f"param/{name}"] = p.data
    for name, m in state.adam.m.items():
        arrays[f"adam_m/{name}"] = m
        arrays[f"adam_v/{name}"] = state.adam.v[name]
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    os.replace(tmp, path)


def load_train_state(path: str, model) -> TrainState:
    import json

    with np.load(path) as archive:
        meta = json.loads(bytes(archive["__meta__"]).decode())
        adam = AdamState(
            step=meta["adam_step"],
            beta1=meta["betas"][0],
            beta2=meta["betas"][1],
            eps=meta["betas"][2],
        )
        for key in archive.files:
            if key.startswith("param/"):
                model.params[key[len("param/"):]].data = archive[key].copy()
            elif key.startswith("adam_m/"):
                adam.m[key[len("adam_m/"):]] = archive[key].copy()
            elif key.startswith("adam_v/"):
                adam.v[key[len("adam_v/"):]] = archive[key].copy()
    return TrainState(
        adam=adam,
        step=meta["step"],
        best_metric=meta["best_metric"],
        best_step=meta["best_step"],
        evals_since_improve=meta["evals_since_improve"],
        evals=meta["evals"],
        history=[tuple(h) for h in meta["history"]],
    )


def _batch_stream(corpus, tokens_per_batch: int, seed: int):
    """Endless deterministic stream of (step, batch); reshuffled per epoch."""
    step = 0
    epoch = 0
    while True:
        for batch in make_batches(corpus, tokens_per_batch, stream_seed(seed, "shuffle", (epoch,))):
            step += 1
            yield step, batch
        epoch += 1


def _ordered_eval_batches(rows: list[np.ndarray], chunk: int = 64) -> list[list[np.ndarray]]:
    return [rows[i : i + chunk] for i in range(0, len(rows), chunk)]


def _fmt(value: float | None) -> str:
    return "" if value is None else f"{value:.6f}"


class _MetricsLog:
    def __init__(self, path: str):
        self.path = path
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(CSV_HEADER + "\n")

    def append(self, step, lr, total, mt, kl, bleu, ppl, entropy_mean):
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(
                f"{step},{lr:.8f},{_fmt(total)},{_fmt(mt)},{_fmt(kl)},"
                f"{_fmt(bleu)},{_fmt(ppl)},{_fmt(entropy_mean)}\n"
            )


@dataclass
class _RunningLoss:
    total: float = 0.0
    mt: float = 0.0
    kl: float = 0.0
    n: int = 0

    def add(self, loss: LossBreakdown) -> None:
        self.total += float(loss.total.data)
        self.mt += loss.mt_term
        self.kl += loss.kl_term
        self.n += 1

    def means(self) -> tuple[float, float, float]:
        n = max(1, self.n)
        return self.total / n, self.mt / n, self.kl / n

    def reset(self) -> None:
        self.total = self.mt = self.kl = 0.0
        self.n = 0


def _train_engine(
    cfg: ExperimentConfig,
    model,
    tokenizers: dict[str, SubwordModel],
    corpus,
    loss_fn,
    eval_fn,
    higher_better: bool,
    out_dir: str,
    resume: TrainState | None = None,
    stop_after: int | None = None,
    state_path: str | None = None,
) -> TrainResult:
    os.makedirs(out_dir, exist_ok=True)
    ckpt_path = os.path.join(out_dir, "checkpoint_best.npz")
    log_path = os.path.join(out_dir, "metrics.csv")

    if resume is None:
        state = TrainState(
            adam=AdamState(beta1=cfg.adam_beta1, beta2=cfg.adam_beta2, eps=cfg.adam_eps),
            step=0,
            best_metric=-math.inf if higher_better else math.inf,
            best_step=0,
            evals_since_improve=0,
            evals=0,
            history=[],
        )
        log = _MetricsLog(log_path)
    else:
        state = resume
        log = _MetricsLog.__new__(_MetricsLog)
        log.path = log_path

    running = _RunningLoss()
    stopped = False
    for step, batch in _batch_stream(corpus, cfg.tokens_per_batch, cfg.seed):
        if step <= state.step:
            continue  # fast-forward a resumed run through consumed batches
        state.step = step
        drop_rng = stream_rng(cfg.seed, "dropout", (step,)) if cfg.dropout > 0 else None
        loss = loss_fn(batch, drop_rng)
        grads = ad.backward(loss.total)
        model.zero_grads()
        clip_gradients(grads, cfg.clip_norm)
        lr = lr_schedule(step, cfg.lr, cfg.warmup_steps)
        adam_step(model.params, grads, state.adam, lr)
        running.add(loss)

        if step % cfg.eval_every == 0:
            state.evals += 1
            bleu, ppl, entropy_mean, metric = eval_fn(model)
            total, mt, kl = running.means()
            running.reset()
            log.append(step, lr, total, mt, kl, bleu, ppl, entropy_mean)
            state.history.append((step, metric))
            improved = metric > state.best_metric if higher_better else metric < state.best_metric
            if improved:
                state.best_metric = metric
                state.best_step = step
                state.evals_since_improve = 0
                save_checkpoint(
                    ckpt_path,
                    model,
                    tokenizers,
                    step,
                    dev_history=[list(h) for h in state.history],
                )
            else:
                state.evals_since_improve += 1
                if state.evals_since_improve >= cfg.patience:
                    stopped = True
        if state_path is not None and (step % cfg.eval_every == 0):
            save_train_state(state_path, model, state)
        if stopped or step >= cfg.max_steps or (stop_after is not None and step >= stop_after):
            break

    if not os.path.exists(ckpt_path):
        # no evaluation improved on -inf only if the loop never evaluated
        save_checkpoint(ckpt_path, model, tokenizers, state.step, dev_history=[])
    best = load_checkpoint(ckpt_path).build_model()
    return TrainResult(
        model=best,
        tokenizers=tokenizers,
        best_metric=state.best_metric,
        best_step=state.best_step,
        steps=state.step,
        evals=state.evals,
        history=state.history,
        checkpoint_path=ckpt_path,
        log_path=log_path,
    )


def _arch_from_config(cfg: ExperimentConfig) -> ArchConfig:
    return ArchConfig(
        n_layers=cfg.n_layers,
        d_model=cfg.d_model,
        n_heads=cfg.n_heads,
        d_ff=cfg.d_ff,
        dropout=cfg.dropout,
        precision=cfg.precision,
    )


def train_lm(
    cfg: ExperimentConfig,
    train_lines: list[str],
    dev_lines: list[str],
    tokenizer: SubwordModel,
    out_dir: str | None = None,
    resume: TrainState | None = None,
    stop_after: int | None = None,
    state_path: str | None = None,
    model: TransformerLM | None = None,
) -> TrainResult:
    """Train a language model on monolingual lines; early stopping on dev
    perplexity."""
    if not train_lines or not dev_lines:
        raise InvalidInputError("LM training needs non-empty train and dev line sets")
    out_dir = out_dir or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    corpus = encode_mono(train_lines, tokenizer)
    dev_rows = encode_mono(dev_lines, tokenizer)
    dev_batches = [
        Batch(*_pad_rows(chunk), token_count=sum(len(r) for r in chunk))
        for chunk in _ordered_eval_batches(dev_rows)
    ]
    if model is None:
        model = TransformerLM(len(tokenizer.vocab), _arch_from_config(cfg), seed=cfg.seed)

    def loss_fn(batch: Batch, drop_rng) -> LossBreakdown:
        logits = model.logits(batch.tgt_ids[:, :-1], dropout_rng=drop_rng)
        # language models train on plain likelihood: smoothing would flatten
        # exactly the distributions the prior is supposed to contribute
        return compute_loss("mle", logits, batch.tgt_ids[:, 1:], batch.tgt_mask[:, 1:])

    def eval_fn(lm):
        ppl = perplexity(lm, dev_batches)
        ent = entropy_profile(dev_batches, lm=lm, mode="lm").mean
        return None, ppl, ent, ppl

    tokenizer.save(os.path.join(out_dir, "vocab.tgt.txt"), os.path.join(out_dir, "merges.tgt.txt"))
    return _train_engine(
        cfg, model, {"tgt": tokenizer}, corpus, loss_fn, eval_fn,
        higher_better=False, out_dir=out_dir, resume=resume,
        stop_after=stop_after, state_path=state_path,
    )


def train_translator(
    cfg: ExperimentConfig,
    data: TMData,
    src_tokenizer: SubwordModel,
    tgt_tokenizer: SubwordModel,
    prior: LMPrior | None = None,
    out_dir: str | None = None,
    resume: TrainState | None = None,
    stop_after: int | None = None,
    state_path: str | None = None,
    model: TransformerTranslator | None = None,
) -> TrainResult:
    """Train a translation model under the configured objective.

    For prior/postnorm objectives the frozen LM must share the target
    tokenizer; this is checked before any training starts. Dev decoding is
    greedy; postnorm models decode with the product scorer because the LM is
    part of their output distribution.
    """
    if not data.train_pairs or not data.dev_pairs:
        raise InvalidInputError("TM training needs non-empty train and dev pairs")
    out_dir = out_dir or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    lm_in_loss = needs_lm(cfg.objective) and (
        cfg.objective.startswith("postnorm") or cfg.lam > 0
    )
    if lm_in_loss and prior is None:
        raise ConfigError(f"objective {cfg.objective!r} needs a frozen LM checkpoint")
    if prior is not None:
        if vocab_hash(prior.tokenizer) != vocab_hash(tgt_tokenizer):
            raise ConfigError(
                "LM and TM target vocabularies differ; the KL term is only "
                "defined over a shared vocabulary"
            )
        prior.model.freeze()

    corpus = encode_parallel(data.train_pairs, src_tokenizer, tgt_tokenizer)
    dev_corpus = encode_parallel(data.dev_pairs, src_tokenizer, tgt_tokenizer)
    dev_batches = []
    for chunk in _ordered_eval_batches(dev_corpus.pairs):
        src_ids, src_mask = _pad_rows([p[0] for p in chunk])
        tgt_ids, tgt_mask = _pad_rows([p[1] for p in chunk])
        dev_batches.append(
            Batch(
                tgt_ids=tgt_ids, tgt_mask=tgt_mask,
                token_count=sum(max(len(s), len(t)) for s, t in chunk),
                src_ids=src_ids, src_mask=src_mask,
            )
        )
    dev_refs = [tgt for _, tgt in data.dev_pairs]

    if model is None:
        model = TransformerTranslator(
            len(src_tokenizer.vocab), len(tgt_tokenizer.vocab), _arch_from_config(cfg), seed=cfg.seed
        )
    lm_model = prior.model if prior is not None else None

    def loss_fn(batch: Batch, drop_rng) -> LossBreakdown:
        logits = model.logits(batch.src_ids, batch.src_mask, batch.tgt_ids[:, :-1], dropout_rng=drop_rng)
        gold = batch.tgt_ids[:, 1:]
        mask = batch.tgt_mask[:, 1:]
        lm_logits = None
        if lm_in_loss:
            with ad.no_grad():
                lm_logits = lm_model.logits(batch.tgt_ids[:, :-1]).data
        return compute_loss(
            cfg.objective, logits, gold, mask,
            lm_logits=lm_logits, weight=cfg.lam, tau=cfg.tau, alpha=cfg.alpha,
        )

    postnorm_decode = cfg.objective.startswith("postnorm")
    entropy_mode = "combined" if postnorm_decode else "tm"

    def eval_fn(tm):
        scorer = (
            FusionScorer("postnorm", lm=LMStepper(lm_model)) if postnorm_decode else FusionScorer()
        )
        hyps = []
        for batch in dev_batches:
            decoded = greedy_decode_batch(
                tm, batch.src_ids, batch.src_mask, scorer,
                cfg.max_decode_factor, cfg.max_decode_extra,
            )
            hyps.extend(tgt_tokenizer.decode(tokens) for tokens in decoded)
        bleu = corpus_bleu(hyps, dev_refs).score
        ppl = perplexity(tm, dev_batches)
        ent = entropy_profile(dev_batches, tm=tm, lm=lm_model, mode=entropy_mode).mean
        return bleu, ppl, ent, bleu

    src_tokenizer.save(os.path.join(out_dir, "vocab.src.txt"), os.path.join(out_dir, "merges.src.txt"))
    tgt_tokenizer.save(os.path.join(out_dir, "vocab.tgt.txt"), os.path.join(out_dir, "merges.tgt.txt"))
    return _train_engine(
        cfg, model, {"src": src_tokenizer, "tgt": tgt_tokenizer}, corpus,
        loss_fn, eval_fn, higher_better=True, out_dir=out_dir, resume=resume,
        stop_after=stop_after, state_path=state_path,
    )
