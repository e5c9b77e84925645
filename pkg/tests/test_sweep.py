"""Sensitivity grid mechanics on a minuscule task (the full-size sweep is
exercised by the acceptance suite)."""

import numpy as np
import pytest

from nanomt.config import ExperimentConfig
from nanomt.sweep import SensitivityGrid, sensitivity_sweep
from nanomt.tokenizer import train_subword_model
from nanomt.toy import generate
from nanomt.training import LMPrior, TMData, train_lm, train_translator


@pytest.fixture(scope="module")
def tiny_world(tmp_path_factory):
    root = tmp_path_factory.mktemp("sweep")
    corpus = generate("copy", 50, 120, seed=0, alphabet_size=6, min_len=2, max_len=5)
    tgt_tok = train_subword_model(
        [t for _, t in corpus.train_pairs] + corpus.mono_lines, 60, "bpe"
    )
    src_tok = train_subword_model([s for s, _ in corpus.train_pairs], 60, "bpe")
    data = TMData(corpus.train_pairs, corpus.dev_pairs[:15])
    cfg = ExperimentConfig(n_layers=1, d_model=16, n_heads=2, d_ff=32,
                           max_steps=20, eval_every=10, patience=3,
                           tokens_per_batch=64, lr=1e-3, warmup_steps=10)
    priors = {}
    for seed in (0, 1):
        lm = train_lm(cfg.replace(seed=seed), corpus.mono_lines[:-30],
                      corpus.mono_lines[-30:], tgt_tok,
                      out_dir=str(root / f"lm{seed}"))
        priors[seed] = LMPrior(lm.model, tgt_tok)
    return root, cfg, data, src_tok, tgt_tok, priors


class TestSensitivitySweep:
    def test_grid_complete_and_csv_stable(self, tiny_world, tmp_path):
        root, cfg, data, src_tok, tgt_tok, priors = tiny_world
        grid = sensitivity_sweep(cfg, data, src_tok, tgt_tok, priors,
                                 lambdas=[0.0, 0.5], taus=[1.0, 2.0], seeds=[0, 1],
                                 out_dir=str(tmp_path / "grid"))
        assert grid.complete
        assert len(grid.cells) == 8
        csv = (tmp_path / "grid" / "sensitivity.csv").read_text().splitlines()
        assert csv[0] == "lambda,tau,seed,dev_bleu"
        assert len(csv) == 9

    def test_lambda_zero_cell_equals_mle_run(self, tiny_world, tmp_path):
        root, cfg, data, src_tok, tgt_tok, priors = tiny_world
        grid = sensitivity_sweep(cfg, data, src_tok, tgt_tok, priors,
                                 lambdas=[0.0], taus=[1.0], seeds=[0],
                                 out_dir=str(tmp_path / "zero"))
        mle = train_translator(cfg.replace(objective="mle", seed=0), data,
                               src_tok, tgt_tok, out_dir=str(tmp_path / "mle"))
        assert grid.cells[(0.0, 1.0, 0)] == pytest.approx(mle.best_metric)

    def test_failed_cell_is_hole_not_zero(self, tiny_world, tmp_path):
        root, cfg, data, src_tok, tgt_tok, priors = tiny_world
        # seed 5 has no prior: the cell must fail and be recorded as a hole
        grid = sensitivity_sweep(cfg, data, src_tok, tgt_tok, priors,
                                 lambdas=[0.5], taus=[1.0], seeds=[5],
                                 out_dir=str(tmp_path / "hole"))
        assert grid.cells[(0.5, 1.0, 5)] is None
        assert not grid.complete
        csv = (tmp_path / "hole" / "sensitivity.csv").read_text()
        assert "NA" in csv

    def test_mean_bleu_ignores_holes(self):
        grid = SensitivityGrid([0.5], [1.0], [0, 1])
        grid.cells[(0.5, 1.0, 0)] = 10.0
        grid.cells[(0.5, 1.0, 1)] = None
        assert grid.mean_bleu(0.5, 1.0) == 10.0
