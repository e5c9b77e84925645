"""Command-line entry points.

Commands: gen-toy, train-lm, train-tm, translate, evaluate, analyze-entropy,
sweep. Exit codes: 0 success, 1 usage error, 2 runtime failure. Every
training command writes its fully resolved config into the output directory.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .checkpoint import load_checkpoint
from .config import load_config, parse_overrides, write_resolved_config
from .data import read_lines, write_lines, _pad_rows
from .decoding import FusionScorer, LMStepper, beam_search, trace_disagreement
from .errors import ConfigError, InvalidInputError, NanomtError
from .metrics import corpus_bleu, entropy_profile, write_entropy_csv
from .pipeline import load_parallel, load_prior, run_train_lm, run_train_tm, split_lm_dev, load_mono, build_target_tokenizer
from .sweep import sensitivity_sweep
from .toy import TASKS, generate, write_corpus
from .training import LMPrior, TMData, train_lm
from .data import Batch, encode_parallel


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems with exit code 1."""

    def error(self, message):
        raise UsageError(message)


def _config_from_args(args) -> "ExperimentConfig":
    overrides = parse_overrides(args.set or [])
    for flag in ("out_dir", "seed", "objective", "lm_checkpoint"):
        value = getattr(args, flag.replace("-", "_"), None)
        if value is not None:
            overrides[flag] = value
    return load_config(args.config, overrides)


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--out-dir", dest="out_dir", help="output directory")
    p.add_argument("--seed", type=int, help="master seed")


def _cmd_gen_toy(args) -> int:
    corpus = generate(args.task, args.n_pairs, args.n_mono, args.seed or 0)
    paths = write_corpus(corpus, args.out_dir or "toy-data")
    print(f"wrote {len(paths)} corpus files under {os.path.dirname(paths['mono'])}")
    return 0


def _cmd_train_lm(args) -> int:
    cfg = _config_from_args(args)
    result = run_train_lm(cfg)
    print(
        f"best dev perplexity {result.best_metric:.4f} at step {result.best_step} "
        f"({result.steps} steps); checkpoint: {result.checkpoint_path}"
    )
    return 0


def _cmd_train_tm(args) -> int:
    cfg = _config_from_args(args)
    result = run_train_tm(cfg, warn=lambda msg: print(f"warning: {msg}", file=sys.stderr))
    print(
        f"best dev BLEU {result.best_metric:.2f} at step {result.best_step} "
        f"({result.steps} steps); checkpoint: {result.checkpoint_path}"
    )
    return 0


def _load_tm(path):
    ckpt = load_checkpoint(path)
    if ckpt.kind != "tm":
        raise ConfigError(f"{path} is not a translation-model checkpoint")
    return ckpt.build_model(), ckpt.tokenizer("src"), ckpt.tokenizer("tgt")


def _cmd_translate(args) -> int:
    tm, src_tok, tgt_tok = _load_tm(args.checkpoint)
    scorer = FusionScorer()
    if args.fusion != "plain":
        if not args.lm_checkpoint:
            raise UsageError(f"fusion mode {args.fusion!r} needs --lm-checkpoint")
        prior = load_prior(args.lm_checkpoint)
        from .checkpoint import vocab_hash

        if vocab_hash(prior.tokenizer) != vocab_hash(tgt_tok):
            raise ConfigError("LM and TM checkpoints use different target vocabularies")
        scorer = FusionScorer(args.fusion, beta=args.beta, lm=LMStepper(prior.model))
    lines = read_lines(args.input, args.lowercase)
    outputs = []
    for line in lines:
        ids = np.asarray(src_tok.encode(line), dtype=np.int64)
        if ids.size == 0:
            outputs.append("")
            continue
        hyp = beam_search(
            tm, ids, scorer, beam_size=args.beam_size,
            length_normalize=not args.no_length_norm,
        )
        outputs.append(tgt_tok.decode(hyp.tokens))
    if args.output:
        write_lines(args.output, outputs)
    else:
        for line in outputs:
            print(line)
    return 0


def _cmd_evaluate(args) -> int:
    hyps = read_lines(args.hypotheses)
    refs = read_lines(args.references)
    result = corpus_bleu(hyps, refs, smoothing="add1" if args.smooth else "none")
    print(result)
    return 0


def _batches_for_analysis(pairs, src_tok, tgt_tok, chunk=64):
    corpus = encode_parallel(pairs, src_tok, tgt_tok)
    batches = []
    for i in range(0, len(corpus.pairs), chunk):
        part = corpus.pairs[i : i + chunk]
        src_ids, src_mask = _pad_rows([p[0] for p in part])
        tgt_ids, tgt_mask = _pad_rows([p[1] for p in part])
        batches.append(Batch(tgt_ids, tgt_mask, 0, src_ids, src_mask))
    return batches


def _cmd_analyze_entropy(args) -> int:
    if not args.checkpoints:
        raise UsageError("analyze-entropy needs at least one checkpoint")
    pairs = list(zip(read_lines(args.src, args.lowercase), read_lines(args.tgt, args.lowercase)))
    lm_prior = load_prior(args.lm_checkpoint) if args.lm_checkpoint else None

    profiles = {}
    tgt_hash = None
    traced = False
    for spec in args.checkpoints:
        tag, _, path = spec.rpartition("=")
        if not tag:
            tag = os.path.splitext(os.path.basename(path))[0]
        ckpt = load_checkpoint(path)
        from .checkpoint import vocab_hash

        this_hash = ckpt.meta["vocab_hash"]
        if tgt_hash is None:
            tgt_hash = this_hash
        elif this_hash != tgt_hash:
            raise ConfigError(f"{path} uses a different target vocabulary")
        model = ckpt.build_model()
        tgt_tok = ckpt.tokenizer("tgt")
        if ckpt.kind == "lm":
            batches = _batches_for_analysis([(t, t) for _, t in pairs], tgt_tok, tgt_tok)
            profiles[tag] = entropy_profile(batches, lm=model, mode="lm")
        else:
            src_tok = ckpt.tokenizer("src")
            batches = _batches_for_analysis(pairs, src_tok, tgt_tok)
            if args.combined:
                if lm_prior is None:
                    raise UsageError("--combined needs --lm-checkpoint")
                profiles[tag] = entropy_profile(
                    batches, tm=model, lm=lm_prior.model, mode="combined"
                )
            else:
                profiles[tag] = entropy_profile(batches, tm=model, mode="tm")
            if args.trace and lm_prior is not None and not traced:
                traced = True
                _write_traces(args.trace, model, lm_prior, pairs[: args.trace_limit], src_tok, tgt_tok)
    write_entropy_csv(args.out, profiles)
    print(f"wrote entropy histograms for {len(profiles)} model(s) to {args.out}")
    return 0


def _write_traces(path, tm, prior: LMPrior, pairs, src_tok, tgt_tok) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for src, tgt in pairs:
            src_ids = src_tok.encode(src)
            gold = tgt_tok.encode(tgt)
            if not src_ids or not gold:
                continue
            from .tokenizer import BOS, EOS

            steps = trace_disagreement(tm, prior.model, src_ids, [BOS] + gold + [EOS])
            fh.write(f"# src: {src}\n# tgt: {tgt}\n")
            for st in steps:
                mark = " FLIP" if st.flip else ""
                fh.write(
                    f"step {st.position}: tm_top={st.tm_top[0]} lm_top={st.lm_top[0]} "
                    f"combined_top={st.combined_top[0]}{mark}\n"
                )


def _cmd_sweep(args) -> int:
    cfg = _config_from_args(args)
    lambdas = [float(x) for x in args.lambdas.split(",")]
    taus = [float(x) for x in args.taus.split(",")]
    seeds = [int(x) for x in args.seeds.split(",")]
    out_dir = cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    write_resolved_config(cfg, out_dir)

    data = TMData(
        train_pairs=load_parallel(cfg, "train", filtered=True),
        dev_pairs=load_parallel(cfg, "dev", filtered=False),
    )
    mono = load_mono(cfg)
    tgt_tok = build_target_tokenizer(cfg, [t for _, t in data.train_pairs], mono)
    from .tokenizer import SubwordModel

    src_tok = SubwordModel.train([s for s, _ in data.train_pairs], cfg.src_vocab_size, cfg.tokenizer_mode)

    priors = {}
    train_lines, dev_lines = split_lm_dev(mono, cfg.lm_dev_fraction)
    for seed in seeds:
        lm_dir = os.path.join(out_dir, f"lm_seed{seed}")
        result = train_lm(cfg.replace(seed=seed), train_lines, dev_lines, tgt_tok, out_dir=lm_dir)
        priors[seed] = LMPrior(model=result.model, tokenizer=tgt_tok)
        print(f"LM seed {seed}: dev perplexity {result.best_metric:.3f}")

    def on_cell(lam, tau, seed, bleu, exc):
        if exc is not None:
            print(f"cell lam={lam} tau={tau} seed={seed}: FAILED ({exc})", file=sys.stderr)
        else:
            print(f"cell lam={lam} tau={tau} seed={seed}: dev BLEU {bleu:.2f}")

    grid = sensitivity_sweep(
        cfg, data, src_tok, tgt_tok, priors, lambdas, taus, seeds,
        out_dir=out_dir, on_cell=on_cell,
    )
    print(f"grid complete: {grid.complete}; CSV at {os.path.join(out_dir, 'sensitivity.csv')}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="nanomt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-toy", help="generate a synthetic corpus")
    p.add_argument("--task", choices=TASKS, required=True)
    p.add_argument("--n-pairs", type=int, required=True)
    p.add_argument("--n-mono", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", dest="out_dir", default="toy-data")
    p.set_defaults(func=_cmd_gen_toy)

    p = sub.add_parser("train-lm", help="train the target-side language model")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_train_lm)

    p = sub.add_parser("train-tm", help="train a translation model")
    _add_config_flags(p)
    p.add_argument("--objective")
    p.add_argument("--lm-checkpoint", dest="lm_checkpoint")
    p.set_defaults(func=_cmd_train_tm)

    p = sub.add_parser("translate", help="decode a file with a trained model")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output")
    p.add_argument("--fusion", choices=("plain", "shallow", "postnorm"), default="plain")
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--beam-size", type=int, default=5)
    p.add_argument("--lm-checkpoint", dest="lm_checkpoint")
    p.add_argument("--no-length-norm", action="store_true")
    p.add_argument("--lowercase", action="store_true")
    p.set_defaults(func=_cmd_translate)

    p = sub.add_parser("evaluate", help="corpus BLEU of a hypothesis file")
    p.add_argument("--hypotheses", required=True)
    p.add_argument("--references", required=True)
    p.add_argument("--smooth", action="store_true", help="add-one smoothing")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("analyze-entropy", help="entropy histograms and fusion traces")
    p.add_argument("checkpoints", nargs="+", metavar="[TAG=]CHECKPOINT")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lm-checkpoint", dest="lm_checkpoint")
    p.add_argument("--combined", action="store_true",
                   help="profile the TM x LM product instead of the TM alone")
    p.add_argument("--trace", help="write per-step disagreement traces here")
    p.add_argument("--trace-limit", type=int, default=10)
    p.add_argument("--lowercase", action="store_true")
    p.set_defaults(func=_cmd_analyze_entropy)

    p = sub.add_parser("sweep", help="lambda x tau sensitivity grid")
    _add_config_flags(p)
    p.add_argument("--lambdas", default="0.1,0.5,1.0")
    p.add_argument("--taus", default="1,2")
    p.add_argument("--seeds", default="0,1,2")
    p.set_defaults(func=_cmd_sweep)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except NanomtError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
