from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kdselect.config import EmbedderConfig
from kdselect.losses import (
    BatchTooSmallError,
    FileEmbedder,
    HashingEmbedder,
    EmbeddingLookupError,
    build_embedder,
    ce_loss,
    combine,
    infonce_loss,
    numeric_warnings,
    soft_ce_loss,
    soft_label,
    text_key,
)
from oracles import check_gradients


class TestSoftLabel:
    def test_symmetric_performance_is_uniform(self):
        for temp in (0.1, 0.25, 1.0):
            np.testing.assert_allclose(
                soft_label(np.array([0.5, 0.5, 0.5]), temp), 1.0 / 3.0, atol=1e-12)

    def test_arithmetic_oracle(self):
        # direct arithmetic: probs_j = exp(perf_j / t) / sum_k exp(perf_k / t)
        perf = [0.9, 0.5, 0.1]
        temp = 0.25
        raw = [math.exp(p / temp) for p in perf]
        expected = [r / sum(raw) for r in raw]
        np.testing.assert_allclose(expected, [0.8047261749, 0.1624714126, 0.0328024125],
                                   atol=1e-9)
        np.testing.assert_allclose(soft_label(np.array(perf), temp), expected,
                                   atol=1e-12)

    def test_low_temperature_approaches_onehot(self):
        probs = soft_label(np.array([0.9, 0.5, 0.1]), 1e-3)
        np.testing.assert_allclose(probs, [1.0, 0.0, 0.0], atol=1e-12)

    @given(st.lists(st.floats(0, 1, allow_nan=False), min_size=2, max_size=8),
           st.sampled_from([0.2, 0.22, 0.25, 1.0]))
    @settings(max_examples=60, deadline=None)
    def test_sums_to_one_and_preserves_argmax(self, perf, temp):
        perf = np.asarray(perf)
        probs = soft_label(perf, temp)
        assert probs.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.all(probs >= 0)
        assert int(np.argmax(probs)) == int(np.argmax(perf))

    def test_bad_temperature(self):
        with pytest.raises(ValueError):
            soft_label(np.array([0.5, 0.5]), 0.0)


class TestCeLoss:
    def test_onehot_prediction_is_zero(self):
        losses, _ = ce_loss(np.array([[0.0, 1.0, 0.0]]), [1])
        assert losses[0] == pytest.approx(0.0, abs=1e-9)

    def test_uniform_two_class(self):
        losses, _ = ce_loss(np.array([[0.5, 0.5]]), [0])
        assert losses[0] == pytest.approx(math.log(2.0))

    def test_gradient_is_probs_minus_onehot(self):
        probs = np.array([[0.2, 0.5, 0.3]])
        _, grad = ce_loss(probs, [2])
        np.testing.assert_allclose(grad, [[0.2, 0.5, -0.7]])

    def test_zero_prob_clamps_and_counts(self):
        numeric_warnings.reset()
        losses, _ = ce_loss(np.array([[1.0, 0.0]]), [1])
        assert losses[0] == pytest.approx(-math.log(1e-12))
        assert numeric_warnings.clamps == 1
        numeric_warnings.reset()

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        logits = {"logits": rng.normal(size=(3, 4)).astype(np.float32)}
        y = np.array([0, 3, 2])

        def softmax(z):
            e = np.exp(z - z.max(axis=1, keepdims=True))
            return e / e.sum(axis=1, keepdims=True)

        def loss_fn() -> float:
            losses, _ = ce_loss(softmax(logits["logits"].astype(np.float64)), y)
            return float(losses.sum())

        _, dlogits = ce_loss(softmax(logits["logits"].astype(np.float64)), y)
        err = check_gradients(loss_fn, logits, {"logits": dlogits}, rng,
                              coords_per_group=12)
        assert err < 1e-4


class TestSoftCeLoss:
    def test_equals_entropy_at_match(self):
        target = np.array([[0.6, 0.3, 0.1]])
        losses, _ = soft_ce_loss(target, target)
        entropy = -(target * np.log(target)).sum()
        assert losses[0] == pytest.approx(entropy)

    def test_onehot_target_reduces_to_ce(self):
        rng = np.random.default_rng(6)
        probs = rng.dirichlet(np.ones(4), size=5)
        y = rng.integers(0, 4, size=5)
        onehot = np.eye(4)[y]
        soft_losses, soft_grad = soft_ce_loss(probs, onehot)
        hard_losses, hard_grad = ce_loss(probs, y)
        np.testing.assert_allclose(soft_losses, hard_losses, atol=1e-12)
        np.testing.assert_allclose(soft_grad, hard_grad, atol=1e-12)

    def test_uniform_uniform_four_class(self):
        uniform = np.full((1, 4), 0.25)
        losses, _ = soft_ce_loss(uniform, uniform)
        assert losses[0] == pytest.approx(math.log(4.0))

    @given(st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_gibbs_inequality(self, seed):
        rng = np.random.default_rng(seed)
        probs = rng.dirichlet(np.ones(5), size=1)
        target = rng.dirichlet(np.ones(5), size=1)
        losses, _ = soft_ce_loss(probs, target)
        entropy = -(target * np.log(target)).sum()
        assert losses[0] >= entropy - 1e-9

    def test_non_distribution_target_rejected(self):
        with pytest.raises(ValueError, match="sum to 1"):
            soft_ce_loss(np.array([[0.5, 0.5]]), np.array([[0.7, 0.7]]))


class TestInfoNce:
    def test_orthogonal_negatives_closed_form(self):
        u = np.array([[1.0, 0.0], [0.0, 1.0]])
        losses, _, _ = infonce_loss(u, u.copy(), temperature=0.1)
        expected = math.log(1.0 + math.exp(-10.0))  # -log(e^10 / (e^10 + e^0))
        assert expected == pytest.approx(4.5398e-5, rel=1e-3)
        np.testing.assert_allclose(losses, expected, rtol=1e-9)

    def test_all_identical_gives_log_n(self):
        u = np.tile([[0.3, 0.4]], (2, 1))
        losses, _, _ = infonce_loss(u, u.copy(), temperature=0.1)
        np.testing.assert_allclose(losses, math.log(2.0), atol=1e-12)

    def test_loss_decreases_as_positive_aligns(self):
        # numeric sweep: rotate the first positive pair together, negatives fixed
        rng = np.random.default_rng(8)
        v = rng.normal(size=(4, 6))
        previous = None
        for angle in np.linspace(1.2, 0.0, 7):
            u = v.copy()
            u[0] = np.cos(angle) * v[0] + np.sin(angle) * np.linalg.norm(v[0]) * _unit_orth(v[0])
            losses, _, _ = infonce_loss(u, v, temperature=0.1)
            total = float(losses.sum())
            if previous is not None:
                assert total < previous
            previous = total

    def test_batch_too_small(self):
        with pytest.raises(BatchTooSmallError):
            infonce_loss(np.ones((1, 4)), np.ones((1, 4)), 0.1)

    def test_bounded_by_log_n_when_degenerate(self):
        n = 5
        u = np.tile([[1.0, 2.0, 3.0]], (n, 1))
        losses, _, _ = infonce_loss(u, u.copy(), 0.1)
        assert np.all(losses >= 0.0)
        assert np.all(losses <= math.log(n) + 1e-9)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(9)
        params = {
            "u": rng.normal(size=(4, 6)).astype(np.float32),
            "v": rng.normal(size=(4, 6)).astype(np.float32),
        }

        def loss_fn() -> float:
            losses, _, _ = infonce_loss(params["u"].astype(np.float64),
                                        params["v"].astype(np.float64), 0.1)
            return float(losses.sum())

        _, du, dv = infonce_loss(params["u"].astype(np.float64),
                                 params["v"].astype(np.float64), 0.1)
        err = check_gradients(loss_fn, params, {"u": du, "v": dv}, rng,
                              coords_per_group=16)
        assert err < 1e-4

    def test_weights_scale_gradients(self):
        rng = np.random.default_rng(10)
        u = rng.normal(size=(3, 5))
        v = rng.normal(size=(3, 5))
        _, du1, dv1 = infonce_loss(u, v, 0.1)
        _, du2, dv2 = infonce_loss(u, v, 0.1, weights=np.full(3, 2.0))
        np.testing.assert_allclose(du2, 2.0 * du1, atol=1e-12)
        np.testing.assert_allclose(dv2, 2.0 * dv1, atol=1e-12)


def _unit_orth(x: np.ndarray) -> np.ndarray:
    probe = np.zeros_like(x)
    probe[np.argmin(np.abs(x))] = 1.0
    orth = probe - (probe @ x) / (x @ x) * x
    return orth / np.linalg.norm(orth)


class TestCombine:
    def test_plain_ce_when_all_off(self):
        out = combine(1.5, 0.7, 0.3, alpha=0.4, lam=0.78,
                      soft_enabled=False, align_enabled=False)
        assert out.total == pytest.approx(1.5)
        assert out.soft == 0.0 and out.align == 0.0

    def test_alpha_one_drops_ce(self):
        out = combine(1.5, 0.7, 0.3, alpha=1.0, lam=0.5,
                      soft_enabled=True, align_enabled=True)
        assert out.total == pytest.approx(0.7 + 0.5 * 0.3)

    def test_reference_weighting(self):
        out = combine(1.0, 2.0, 3.0, alpha=0.4, lam=0.78,
                      soft_enabled=True, align_enabled=True)
        assert out.total == pytest.approx(0.6 * 1.0 + 0.4 * 2.0 + 0.78 * 3.0)

    def test_invariant_holds(self):
        out = combine(1.0, 2.0, 3.0, alpha=0.25, lam=1.0,
                      soft_enabled=True, align_enabled=True)
        assert out.total == pytest.approx(
            (1 - 0.25) * out.ce + 0.25 * out.soft + 1.0 * out.align)


class TestEmbedders:
    def test_hashing_deterministic(self):
        emb = HashingEmbedder(32)
        text = "This is a time series from dataset demo."
        np.testing.assert_array_equal(emb.embed(text), emb.embed(text))

    def test_unit_norm(self):
        emb = HashingEmbedder(32)
        vec = emb.embed("some words to hash here")
        assert np.linalg.norm(vec) == pytest.approx(1.0)

    def test_empty_text_is_zero(self):
        assert np.linalg.norm(HashingEmbedder(16).embed("")) == 0.0

    def test_token_permutation_invariant(self):
        # bag-of-words: hand-checked with a 3-token string
        emb = HashingEmbedder(64)
        np.testing.assert_array_equal(
            emb.embed("alpha beta gamma"), emb.embed("gamma alpha beta"))

    def test_case_and_punctuation_normalized(self):
        emb = HashingEmbedder(64)
        np.testing.assert_array_equal(
            emb.embed("Alpha, beta. GAMMA!"), emb.embed("alpha beta gamma"))

    def test_file_embedder_roundtrip(self, tmp_path):
        text = "a known metadata sentence"
        vec = [0.5, -0.5, 0.25]
        path = tmp_path / "emb.csv"
        path.write_text(f"{text_key(text)},3,{vec[0]},{vec[1]},{vec[2]}\n")
        emb = FileEmbedder(path)
        assert emb.dim == 3
        np.testing.assert_array_equal(emb.embed(text), vec)

    def test_file_embedder_missing_key_names_text(self, tmp_path):
        path = tmp_path / "emb.csv"
        path.write_text(f"{text_key('known')},2,1.0,0.0\n")
        emb = FileEmbedder(path)
        with pytest.raises(EmbeddingLookupError, match="mystery sentence"):
            emb.embed("mystery sentence")

    def test_build_embedder_dispatch(self, tmp_path):
        assert isinstance(build_embedder(EmbedderConfig(kind="feature-hash", dim=8)),
                          HashingEmbedder)
        path = tmp_path / "e.csv"
        path.write_text(f"{text_key('x')},2,0.0,1.0\n")
        cfg = EmbedderConfig(kind="precomputed-file", dim=2, path=str(path))
        assert isinstance(build_embedder(cfg), FileEmbedder)
