"""Objective functions: worked values, identities, temperature scaling,
gradient flow."""

import math

import numpy as np
import pytest

from nanomt import autodiff as ad
from nanomt.autodiff import Tensor
from nanomt.errors import ConfigError, InvalidInputError
from nanomt.objectives import (
    compute_loss,
    label_smoothed_targets,
    label_smoothing_loss,
    lm_prior_loss,
    mle_loss,
    needs_lm,
    postnorm_train_loss,
)
from nanomt.probability import kl_array, softmax_array

from helpers import gradcheck


def _logits_for_probs(probs):
    return np.log(np.asarray(probs, dtype=np.float64))


def _one_step(probs_row):
    """(1, 1, K) logits tensor realizing the given step distribution."""
    return Tensor(_logits_for_probs(probs_row)[None, None, :], requires_grad=True, name="s")


ONES_MASK = np.ones((1, 1), dtype=bool)


class TestMleLoss:
    def test_perfect_model_zero_loss(self):
        k = 5
        logits = np.full((1, 3, k), -40.0)
        gold = np.array([[1, 2, 3]])
        for t, g in enumerate(gold[0]):
            logits[0, t, g] = 40.0
        lb = mle_loss(Tensor(logits), gold, np.ones((1, 3), dtype=bool))
        assert float(lb.total.data) == pytest.approx(0.0, abs=1e-9)

    def test_uniform_model_log_k(self):
        k = 7
        lb = mle_loss(Tensor(np.zeros((2, 4, k))), np.zeros((2, 4), dtype=int),
                      np.ones((2, 4), dtype=bool))
        assert float(lb.total.data) == pytest.approx(math.log(k), abs=1e-12)

    def test_two_token_example(self):
        logits = np.stack([
            _logits_for_probs([0.5, 0.25, 0.25]),
            _logits_for_probs([0.25, 0.25, 0.5]),
        ])[None, ...]
        gold = np.array([[0, 1]])  # probs 0.5 and 0.25
        lb = mle_loss(Tensor(logits), gold, np.ones((1, 2), dtype=bool))
        assert float(lb.total.data) == pytest.approx(1.0397, abs=1e-4)

    def test_all_pad_batch_rejected(self):
        with pytest.raises(InvalidInputError):
            mle_loss(Tensor(np.zeros((1, 2, 4))), np.zeros((1, 2), dtype=int),
                     np.zeros((1, 2), dtype=bool))

    def test_mask_excludes_positions(self):
        logits = np.zeros((1, 2, 4))
        gold = np.array([[1, 2]])
        mask = np.array([[True, False]])
        lb = mle_loss(Tensor(logits), gold, mask)
        assert lb.token_count == 1
        assert float(lb.total.data) == pytest.approx(math.log(4))


class TestLabelSmoothing:
    def test_targets_alpha_zero_identity(self):
        one_hot = np.eye(4)[1]
        np.testing.assert_array_equal(label_smoothed_targets(one_hot, 0.0, 4), one_hot)

    def test_targets_worked_example(self):
        smoothed = label_smoothed_targets(np.eye(4)[2], 0.1, 4)
        np.testing.assert_allclose(smoothed[2], 0.925)
        np.testing.assert_allclose(np.delete(smoothed, 2), 0.025)

    def test_targets_sum_to_one(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            k = int(rng.integers(2, 30))
            alpha = float(rng.uniform(0, 0.99))
            smoothed = label_smoothed_targets(np.eye(k)[int(rng.integers(k))], alpha, k)
            assert smoothed.sum() == pytest.approx(1.0, abs=1e-12)

    def test_alpha_out_of_range(self):
        with pytest.raises(ConfigError):
            label_smoothed_targets(np.eye(3)[0], 1.0, 3)
        with pytest.raises(ConfigError):
            label_smoothing_loss(Tensor(np.zeros((1, 1, 3))), np.array([[0]]), ONES_MASK, -0.1)

    def test_alpha_zero_loss_bitwise_mle(self):
        rng = np.random.default_rng(1)
        logits = rng.normal(size=(2, 3, 6))
        gold = rng.integers(0, 6, size=(2, 3))
        mask = np.ones((2, 3), dtype=bool)
        a = label_smoothing_loss(Tensor(logits), gold, mask, 0.0)
        b = mle_loss(Tensor(logits), gold, mask)
        assert float(a.total.data) == float(b.total.data)

    def test_loss_equals_cross_entropy_vs_smoothed_targets(self):
        rng = np.random.default_rng(2)
        k = 5
        logits = rng.normal(size=(1, 2, k))
        gold = np.array([[3, 1]])
        mask = np.ones((1, 2), dtype=bool)
        alpha = 0.2
        lb = label_smoothing_loss(Tensor(logits), gold, mask, alpha)
        log_probs = np.log(softmax_array(logits))
        expected = 0.0
        for t, g in enumerate(gold[0]):
            target = label_smoothed_targets(np.eye(k)[g], alpha, k)
            expected += -(target * log_probs[0, t]).sum()
        assert float(lb.total.data) == pytest.approx(expected / 2, abs=1e-12)


class TestLmPriorLoss:
    def test_weight_zero_is_mle_bitwise(self):
        rng = np.random.default_rng(3)
        logits = rng.normal(size=(2, 3, 5))
        lm_logits = rng.normal(size=(2, 3, 5))
        gold = rng.integers(0, 5, size=(2, 3))
        mask = np.ones((2, 3), dtype=bool)
        a = lm_prior_loss(Tensor(logits), lm_logits, gold, mask, weight=0.0, tau=2.0)
        b = mle_loss(Tensor(logits), gold, mask)
        assert float(a.total.data) == float(b.total.data)
        assert a.kl_term == 0.0

    def test_matching_distributions_zero_kl(self):
        rng = np.random.default_rng(4)
        logits = rng.normal(size=(1, 4, 6))
        gold = rng.integers(0, 6, size=(1, 4))
        lb = lm_prior_loss(Tensor(logits), logits.copy(), gold, np.ones((1, 4), bool),
                           weight=0.5, tau=2.0)
        assert lb.kl_term == pytest.approx(0.0, abs=1e-9)
        assert float(lb.total.data) == pytest.approx(lb.mt_term, abs=1e-9)

    def test_single_step_worked_example(self):
        tm = _one_step([0.5, 0.5])
        lm_logits = _logits_for_probs([0.8, 0.2])[None, None, :]
        gold = np.array([[0]])
        lb = lm_prior_loss(tm, lm_logits, gold, ONES_MASK, weight=0.5, tau=1.0)
        assert lb.kl_term == pytest.approx(0.1927, abs=1e-4)
        kl_contribution = float(lb.total.data) - lb.mt_term
        assert kl_contribution == pytest.approx(0.0964, abs=1e-4)

    def test_total_is_mt_plus_weighted_kl(self):
        rng = np.random.default_rng(5)
        logits = rng.normal(size=(2, 4, 7))
        lm_logits = rng.normal(size=(2, 4, 7))
        gold = rng.integers(0, 7, size=(2, 4))
        mask = rng.random((2, 4)) < 0.8
        mask[:, 0] = True
        for weight, tau in [(0.5, 2.0), (1.0, 1.0), (0.1, 4.0)]:
            lb = lm_prior_loss(Tensor(logits), lm_logits, gold, mask, weight, tau)
            assert float(lb.total.data) == pytest.approx(
                lb.mt_term + weight * lb.kl_term, abs=1e-6
            )

    def test_kl_term_matches_probability_module(self):
        rng = np.random.default_rng(6)
        logits = rng.normal(size=(1, 3, 8))
        lm_logits = rng.normal(size=(1, 3, 8))
        gold = rng.integers(0, 8, size=(1, 3))
        tau = 2.0
        lb = lm_prior_loss(Tensor(logits), lm_logits, gold, np.ones((1, 3), bool), 0.5, tau)
        p_lm = softmax_array(lm_logits, tau)
        p_tm = softmax_array(logits, tau)
        expected = tau * tau * kl_array(p_lm, p_tm).mean()
        assert lb.kl_term == pytest.approx(expected, abs=1e-9)

    def test_mt_term_uses_temperature_one(self):
        rng = np.random.default_rng(7)
        logits = rng.normal(size=(1, 3, 5))
        lm_logits = rng.normal(size=(1, 3, 5))
        gold = rng.integers(0, 5, size=(1, 3))
        mask = np.ones((1, 3), bool)
        lb = lm_prior_loss(Tensor(logits), lm_logits, gold, mask, 0.5, tau=4.0)
        assert lb.mt_term == pytest.approx(float(mle_loss(Tensor(logits), gold, mask).total.data))

    def test_vocab_mismatch_rejected(self):
        with pytest.raises(ConfigError):
            lm_prior_loss(Tensor(np.zeros((1, 2, 4))), np.zeros((1, 2, 5)),
                          np.zeros((1, 2), int), np.ones((1, 2), bool), 0.5, 2.0)

    def test_no_gradient_reaches_lm(self):
        rng = np.random.default_rng(8)
        tm_logits = Tensor(rng.normal(size=(1, 2, 4)), requires_grad=True, name="tm")
        lm = Tensor(rng.normal(size=(1, 2, 4)), requires_grad=False, name="lm")
        lb = lm_prior_loss(tm_logits, lm.data, np.array([[1, 2]]), np.ones((1, 2), bool), 0.5, 2.0)
        grads = ad.backward(lb.total)
        assert "tm" in grads and "lm" not in grads
        assert lm.grad is None

    def test_tau_squared_scale_converges(self):
        # tau^2-scaled KL stabilizes for large tau: values at 10 and 20 agree
        rng = np.random.default_rng(9)
        k = 32
        worst = 0.0
        for _ in range(1000):
            s_lm = rng.normal(0, 1, size=k)
            s_tm = rng.normal(0, 1, size=k)
            values = []
            for tau in (10.0, 20.0):
                p = softmax_array(s_lm, tau)
                q = softmax_array(s_tm, tau)
                values.append(tau * tau * float(kl_array(p, q)))
            rel = abs(values[0] - values[1]) / max(abs(values[0]), abs(values[1]))
            worst = max(worst, rel)
        assert worst < 0.10


class TestPostnormLoss:
    def test_combined_is_normalized_product(self):
        tm = _one_step([0.5, 0.5])
        lm_logits = _logits_for_probs([0.8, 0.2])[None, None, :]
        lb = postnorm_train_loss(tm, lm_logits, np.array([[0]]), ONES_MASK)
        # NLL of gold 0 under combined [0.8, 0.2]
        assert float(lb.total.data) == pytest.approx(-math.log(0.8), abs=1e-9)

    def test_one_hot_lm_acts_as_and(self):
        tm = _one_step([0.6, 0.4])
        lm_logits = np.array([[[60.0, -60.0]]])
        lb = postnorm_train_loss(tm, lm_logits, np.array([[0]]), ONES_MASK)
        assert float(lb.total.data) == pytest.approx(0.0, abs=1e-6)

    def test_uniform_lm_is_identity(self):
        rng = np.random.default_rng(10)
        logits = rng.normal(size=(2, 3, 6))
        gold = rng.integers(0, 6, size=(2, 3))
        mask = np.ones((2, 3), bool)
        lb = postnorm_train_loss(Tensor(logits), np.zeros_like(logits), gold, mask)
        ref = mle_loss(Tensor(logits), gold, mask)
        assert float(lb.total.data) == pytest.approx(float(ref.total.data), abs=1e-9)

    def test_support_subset_of_intersection(self):
        tm = _one_step([0.5, 0.5, 0.0])
        lm_logits = _logits_for_probs([0.0, 0.6, 0.4])[None, None, :]
        lb = postnorm_train_loss(tm, lm_logits, np.array([[1]]), ONES_MASK)
        # only index 1 is supported by both; its combined probability is ~1
        assert float(lb.total.data) == pytest.approx(0.0, abs=1e-6)

    def test_no_gradient_reaches_lm(self):
        rng = np.random.default_rng(11)
        tm_logits = Tensor(rng.normal(size=(1, 3, 5)), requires_grad=True, name="tm")
        lm_logits = rng.normal(size=(1, 3, 5))
        lb = postnorm_train_loss(tm_logits, lm_logits, np.array([[0, 1, 2]]),
                                 np.ones((1, 3), bool))
        grads = ad.backward(lb.total)
        assert set(grads) == {"tm"}


class TestDispatch:
    def test_unknown_objective(self):
        with pytest.raises(ConfigError):
            compute_loss("nope", Tensor(np.zeros((1, 1, 3))), np.array([[0]]), ONES_MASK)

    def test_needs_lm(self):
        assert not needs_lm("mle") and not needs_lm("ls")
        for obj in ("prior", "prior+ls", "postnorm", "postnorm+ls"):
            assert needs_lm(obj)

    def test_prior_plus_ls_smooths_mt_term(self):
        rng = np.random.default_rng(12)
        logits = rng.normal(size=(1, 3, 5))
        lm_logits = rng.normal(size=(1, 3, 5))
        gold = rng.integers(0, 5, size=(1, 3))
        mask = np.ones((1, 3), bool)
        combo = compute_loss("prior+ls", Tensor(logits), gold, mask,
                             lm_logits=lm_logits, weight=0.5, tau=2.0, alpha=0.1)
        plain = compute_loss("prior", Tensor(logits), gold, mask,
                             lm_logits=lm_logits, weight=0.5, tau=2.0, alpha=0.1)
        ls_only = label_smoothing_loss(Tensor(logits), gold, mask, 0.1)
        assert combo.kl_term == pytest.approx(plain.kl_term, abs=1e-12)
        assert combo.mt_term == pytest.approx(float(ls_only.total.data), abs=1e-12)


class TestObjectiveGradients:
    """Finite-difference check of every objective through a real model."""

    def _setup(self):
        from nanomt.models import ArchConfig, TransformerLM, TransformerTranslator

        arch = ArchConfig(n_layers=1, d_model=8, n_heads=2, d_ff=16, precision="float64")
        tm = TransformerTranslator(7, 9, arch, seed=0)
        lm = TransformerLM(9, arch, seed=1)
        lm.freeze()
        rng = np.random.default_rng(13)
        src = rng.integers(4, 7, size=(2, 4))
        src_mask = np.ones_like(src, dtype=bool)
        tgt = np.array([[1, 4, 5, 2], [1, 6, 2, 0]])
        tgt_mask = tgt != 0
        with ad.no_grad():
            lm_logits = lm.logits(tgt[:, :-1]).data
        return tm, src, src_mask, tgt, tgt_mask, lm_logits

    @pytest.mark.parametrize("objective,kw", [
        ("mle", {}),
        ("ls", {"alpha": 0.1}),
        ("prior", {"weight": 0.5, "tau": 1.0}),
        ("prior", {"weight": 0.5, "tau": 2.0}),
        ("postnorm", {}),
    ])
    def test_gradcheck(self, objective, kw):
        tm, src, src_mask, tgt, tgt_mask, lm_logits = self._setup()
        rng = np.random.default_rng(14)

        def loss_fn():
            logits = tm.logits(src, src_mask, tgt[:, :-1])
            return compute_loss(
                objective, logits, tgt[:, 1:], tgt_mask[:, 1:],
                lm_logits=lm_logits,
                weight=kw.get("weight", 0.5), tau=kw.get("tau", 2.0),
                alpha=kw.get("alpha", 0.1),
            ).total

        gradcheck(loss_fn, tm.params, rng, samples_per_param=4)
