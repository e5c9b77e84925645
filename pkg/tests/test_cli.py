"""Command-line interface: exit codes, file outputs, the full tiny pipeline."""

import os

import numpy as np
import pytest

from nanomt.cli import main
from nanomt.data import read_lines


def run(argv):
    return main(argv)


class TestExitCodes:
    def test_unknown_command_is_usage_error(self, capsys):
        assert run(["frobnicate"]) == 1

    def test_missing_required_flag_is_usage_error(self):
        assert run(["gen-toy", "--task", "copy"]) == 1

    def test_unknown_config_key_is_usage_error(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("bogus = 1\n")
        assert run(["train-lm", "--config", str(cfg)]) == 1

    def test_prior_without_lm_checkpoint_fails_fast(self, tmp_path, capsys):
        data_dir = tmp_path / "data"
        assert run(["gen-toy", "--task", "copy", "--n-pairs", "20", "--n-mono", "10",
                    "--out-dir", str(data_dir)]) == 0
        code = run([
            "train-tm", "--objective", "prior",
            "--set", f"train_src={data_dir}/train.src",
            "--set", f"train_tgt={data_dir}/train.tgt",
            "--set", f"dev_src={data_dir}/dev.src",
            "--set", f"dev_tgt={data_dir}/dev.tgt",
            "--out-dir", str(tmp_path / "run"),
        ])
        assert code == 1
        assert "lm-checkpoint" in capsys.readouterr().err

    def test_missing_file_is_runtime_failure(self, tmp_path):
        code = run(["evaluate", "--hypotheses", str(tmp_path / "no.txt"),
                    "--references", str(tmp_path / "no2.txt")])
        assert code == 2


class TestGenToy:
    def test_writes_corpus_files(self, tmp_path):
        out = tmp_path / "toy"
        assert run(["gen-toy", "--task", "digits-to-words", "--n-pairs", "12",
                    "--n-mono", "8", "--seed", "3", "--out-dir", str(out)]) == 0
        for name in ("train.src", "train.tgt", "dev.src", "dev.tgt",
                     "test.src", "test.tgt", "mono.txt"):
            assert (out / name).exists()
        assert len(read_lines(out / "train.src")) == 12

    def test_seeded_reproducibility(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run(["gen-toy", "--task", "copy", "--n-pairs", "9", "--n-mono", "5",
             "--seed", "4", "--out-dir", str(a)])
        run(["gen-toy", "--task", "copy", "--n-pairs", "9", "--n-mono", "5",
             "--seed", "4", "--out-dir", str(b)])
        assert (a / "train.src").read_bytes() == (b / "train.src").read_bytes()


class TestEvaluate:
    def test_bleu_printed(self, tmp_path, capsys):
        hyp = tmp_path / "hyp.txt"
        ref = tmp_path / "ref.txt"
        hyp.write_text("a b c d e\n")
        ref.write_text("a b c d f\n")
        assert run(["evaluate", "--hypotheses", str(hyp), "--references", str(ref)]) == 0
        out = capsys.readouterr().out
        assert out.startswith("BLEU = ")
        assert float(out.split()[2]) == pytest.approx(66.9, abs=0.1)


@pytest.fixture(scope="module")
def tiny_pipeline(tmp_path_factory):
    """gen-toy -> train-lm -> train-tm(prior) artifacts, shared by the
    pipeline tests below. Step counts are tiny; this is a wiring test."""
    root = tmp_path_factory.mktemp("pipeline")
    data = root / "data"
    assert run(["gen-toy", "--task", "digits-to-words", "--n-pairs", "60",
                "--n-mono", "120", "--seed", "0", "--out-dir", str(data)]) == 0
    common = [
        "--set", f"train_src={data}/train.src",
        "--set", f"train_tgt={data}/train.tgt",
        "--set", f"dev_src={data}/dev.src",
        "--set", f"dev_tgt={data}/dev.tgt",
        "--set", f"mono={data}/mono.txt",
        "--set", "n_layers=1", "--set", "d_model=16", "--set", "n_heads=2",
        "--set", "d_ff=32", "--set", "max_steps=30", "--set", "eval_every=15",
        "--set", "tokens_per_batch=128", "--set", "warmup_steps=10",
    ]
    lm_dir = root / "lm"
    assert run(["train-lm", *common, "--out-dir", str(lm_dir), "--seed", "0"]) == 0
    tm_dir = root / "tm"
    assert run([
        "train-tm", *common, "--out-dir", str(tm_dir), "--seed", "0",
        "--objective", "prior", "--lm-checkpoint", str(lm_dir / "checkpoint_best.npz"),
    ]) == 0
    return root, data, lm_dir, tm_dir


class TestPipeline:
    def test_artifacts_exist(self, tiny_pipeline):
        root, data, lm_dir, tm_dir = tiny_pipeline
        for d in (lm_dir, tm_dir):
            assert (d / "checkpoint_best.npz").exists()
            assert (d / "metrics.csv").exists()
            assert (d / "config.resolved.txt").exists()
            assert (d / "vocab.tgt.txt").exists()
        header = (tm_dir / "metrics.csv").read_text().splitlines()[0]
        assert header == "step,lr,loss_total,loss_mt,loss_kl,dev_bleu,dev_ppl,mean_entropy"

    def test_mle_warns_on_unused_lm_checkpoint(self, tiny_pipeline, capsys, tmp_path):
        root, data, lm_dir, _ = tiny_pipeline
        code = run([
            "train-tm",
            "--set", f"train_src={data}/train.src",
            "--set", f"train_tgt={data}/train.tgt",
            "--set", f"dev_src={data}/dev.src",
            "--set", f"dev_tgt={data}/dev.tgt",
            "--set", "n_layers=1", "--set", "d_model=16", "--set", "n_heads=2",
            "--set", "d_ff=32", "--set", "max_steps=15", "--set", "eval_every=15",
            "--set", "tokens_per_batch=128", "--set", "warmup_steps=10",
            "--out-dir", str(tmp_path / "mle"), "--objective", "mle",
            "--lm-checkpoint", str(lm_dir / "checkpoint_best.npz"),
        ])
        assert code == 0
        assert "ignoring" in capsys.readouterr().err

    def test_translate_plain_and_fused(self, tiny_pipeline, tmp_path, capsys):
        root, data, lm_dir, tm_dir = tiny_pipeline
        out = tmp_path / "hyp.txt"
        assert run([
            "translate", "--checkpoint", str(tm_dir / "checkpoint_best.npz"),
            "--input", str(data / "test.src"), "--output", str(out),
            "--beam-size", "2",
        ]) == 0
        hyps = read_lines(out)
        assert len(hyps) == len(read_lines(data / "test.src"))
        assert run([
            "translate", "--checkpoint", str(tm_dir / "checkpoint_best.npz"),
            "--input", str(data / "test.src"), "--output", str(tmp_path / "hyp2.txt"),
            "--fusion", "shallow", "--beta", "0.1",
            "--lm-checkpoint", str(lm_dir / "checkpoint_best.npz"),
        ]) == 0

    def test_translate_fusion_needs_lm(self, tiny_pipeline, tmp_path):
        root, data, _, tm_dir = tiny_pipeline
        assert run([
            "translate", "--checkpoint", str(tm_dir / "checkpoint_best.npz"),
            "--input", str(data / "test.src"), "--fusion", "postnorm",
        ]) == 1

    def test_analyze_entropy(self, tiny_pipeline, tmp_path):
        root, data, lm_dir, tm_dir = tiny_pipeline
        out_csv = tmp_path / "entropy.csv"
        trace = tmp_path / "trace.txt"
        assert run([
            "analyze-entropy",
            f"tm={tm_dir / 'checkpoint_best.npz'}",
            f"lm={lm_dir / 'checkpoint_best.npz'}",
            "--src", str(data / "test.src"), "--tgt", str(data / "test.tgt"),
            "--out", str(out_csv),
            "--lm-checkpoint", str(lm_dir / "checkpoint_best.npz"),
            "--trace", str(trace), "--trace-limit", "3",
        ]) == 0
        lines = out_csv.read_text().splitlines()
        assert lines[0] == "bin_low,bin_high,count,model_tag"
        tags = {line.rsplit(",", 1)[1] for line in lines[1:]}
        assert tags == {"tm", "lm"}
        assert trace.exists()

    def test_identical_checkpoint_twice_identical_histograms(self, tiny_pipeline, tmp_path):
        root, data, lm_dir, tm_dir = tiny_pipeline
        out_csv = tmp_path / "twice.csv"
        assert run([
            "analyze-entropy",
            f"a={tm_dir / 'checkpoint_best.npz'}",
            f"b={tm_dir / 'checkpoint_best.npz'}",
            "--src", str(data / "test.src"), "--tgt", str(data / "test.tgt"),
            "--out", str(out_csv),
        ]) == 0
        rows_a = []
        rows_b = []
        for line in out_csv.read_text().splitlines()[1:]:
            head, tag = line.rsplit(",", 1)
            (rows_a if tag == "a" else rows_b).append(head)
        assert rows_a == rows_b
