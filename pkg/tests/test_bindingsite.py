"""Binding-site head tests: probe sampling, attention distributions, the
averaged residue probability, and the cross-entropy term."""

import math

import numpy as np
import pytest

from s2screen import autograd as ag
from s2screen import bindingsite as bs


class TestSampleProbes:
    def test_k1_is_paired_only(self):
        rng = np.random.default_rng(0)
        assert bs.sample_probe_ids(["L1", "L2", "L3"], "L2", 1, rng) == \
            ["L2"]

    def test_batch_of_two_k2_uses_both(self):
        rng = np.random.default_rng(1)
        picks = bs.sample_probe_ids(["L1", "L2"], "L1", 2, rng)
        assert sorted(picks) == ["L1", "L2"]

    def test_seed_determinism(self):
        ids = [f"L{i}" for i in range(10)]
        a = bs.sample_probe_ids(ids, "L3", 4, np.random.default_rng(7))
        b = bs.sample_probe_ids(ids, "L3", 4, np.random.default_rng(7))
        assert a == b

    def test_small_batch_pads_with_replacement(self):
        rng = np.random.default_rng(2)
        picks = bs.sample_probe_ids(["L1", "L2"], "L1", 5, rng)
        assert len(picks) == 5
        assert picks[0] == "L1"
        assert set(picks) <= {"L1", "L2"}

    def test_singleton_batch_repeats_paired(self):
        rng = np.random.default_rng(3)
        assert bs.sample_probe_ids(["L1"], "L1", 3, rng) == ["L1"] * 3

    def test_paired_always_first(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            picks = bs.sample_probe_ids([f"L{i}" for i in range(6)], "L4",
                                        4, rng)
            assert picks[0] == "L4"
            assert len(set(picks[1:])) == len(picks[1:])

    def test_invalid_k_rejected(self):
        with pytest.raises(ValueError):
            bs.sample_probe_ids(["L1"], "L1", 0, np.random.default_rng(0))


class TestProbeAttention:
    def make(self, rng, d_s=5, d=4):
        return bs.init_probe_attention(rng, d_s, d)

    def test_identical_rows_give_uniform(self):
        rng = np.random.default_rng(4)
        params = self.make(rng)
        x = ag.constant(np.tile(rng.standard_normal(5), (6, 1)))
        probes = ag.constant(rng.standard_normal((2, 4)))
        alphas = bs.probe_attention(params, x, probes)
        np.testing.assert_allclose(alphas.values, 1.0 / 6.0, atol=1e-12)

    def test_single_residue(self):
        rng = np.random.default_rng(5)
        params = self.make(rng)
        alphas = bs.probe_attention(
            params, ag.constant(rng.standard_normal((1, 5))),
            ag.constant(rng.standard_normal((3, 4))))
        np.testing.assert_allclose(alphas.values, 1.0)

    def test_matches_brute_force_softmax(self):
        rng = np.random.default_rng(6)
        params = self.make(rng)
        x = rng.standard_normal((7, 5))
        probes = rng.standard_normal((3, 4))
        alphas = bs.probe_attention(params, ag.constant(x),
                                    ag.constant(probes)).values
        proj_x = x @ params.w_res.values
        proj_p = probes @ params.w_lig.values
        for k in range(3):
            logits = proj_x @ proj_p[k]
            ref = np.exp(logits) / np.exp(logits).sum()
            np.testing.assert_allclose(alphas[k], ref, atol=1e-12)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(7)
        params = self.make(rng)
        alphas = bs.probe_attention(
            params, ag.constant(rng.standard_normal((30, 5)) * 4),
            ag.constant(rng.standard_normal((4, 4)) * 4))
        np.testing.assert_allclose(alphas.values.sum(axis=1), 1.0,
                                   atol=1e-9)


class TestResidueBindingProb:
    def test_single_probe_passthrough(self):
        alpha = np.array([[0.25, 0.75]])
        out = bs.residue_binding_prob(ag.constant(alpha))
        np.testing.assert_allclose(out.values, alpha)

    def test_average_of_onehot_probes(self):
        alphas = ag.constant(np.array([[1.0, 0.0], [0.0, 1.0]]))
        out = bs.residue_binding_prob(alphas)
        np.testing.assert_allclose(out.values, [[0.5, 0.5]])

    def test_probe_order_invariance(self):
        rng = np.random.default_rng(8)
        raw = rng.random((4, 9))
        alphas = raw / raw.sum(axis=1, keepdims=True)
        base = bs.residue_binding_prob(ag.constant(alphas)).values
        perm = rng.permutation(4)
        shuffled = bs.residue_binding_prob(ag.constant(alphas[perm])).values
        np.testing.assert_allclose(shuffled, base, atol=1e-15)

    def test_sums_to_one(self):
        rng = np.random.default_rng(9)
        raw = rng.random((5, 12))
        alphas = raw / raw.sum(axis=1, keepdims=True)
        out = bs.residue_binding_prob(ag.constant(alphas))
        assert out.values.sum() == pytest.approx(1.0, abs=1e-9)


class TestBspLoss:
    def test_near_perfect_single_site(self):
        y_hat = ag.constant(np.array([[1.0 - 1e-12]]))
        loss = bs.bsp_loss([y_hat], [np.array([1.0])])
        assert float(loss.values) == pytest.approx(0.0, abs=1e-9)

    def test_uniform_two_residues_hand_value(self):
        y_hat = ag.constant(np.array([[0.5, 0.5]]))
        loss = bs.bsp_loss([y_hat], [np.array([1.0, 0.0])])
        assert float(loss.values) == pytest.approx(2 * math.log(2))

    def test_all_negative_labels_with_tiny_predictions(self):
        y_hat = ag.constant(np.full((1, 4), 1e-13))
        loss = bs.bsp_loss([y_hat], [np.zeros(4)])
        assert float(loss.values) == pytest.approx(0.0, abs=1e-9)

    def test_batch_averaging(self):
        y_hat = ag.constant(np.array([[0.5, 0.5]]))
        one = bs.bsp_loss([y_hat], [np.array([1.0, 0.0])])
        both = bs.bsp_loss([y_hat, y_hat],
                           [np.array([1.0, 0.0]), np.array([1.0, 0.0])])
        assert float(one.values) == pytest.approx(float(both.values))

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            bs.bsp_loss([ag.constant(np.array([[0.5, 0.5]]))],
                        [np.array([1.0])])

    def test_gradients_reach_probe_and_sequence_inputs(self):
        rng = np.random.default_rng(10)
        labels = np.array([1.0, 0.0, 0.0, 1.0, 0.0])

        def f(leaves):
            x, probes, w_res, w_lig = leaves
            params = bs.ProbeAttentionParams(w_res, w_lig)
            alphas = bs.probe_attention(params, x, probes)
            y_hat = bs.residue_binding_prob(alphas)
            return bs.bsp_loss([y_hat], [labels])

        inputs = [rng.standard_normal((5, 4)), rng.standard_normal((3, 4)),
                  rng.standard_normal((4, 4)), rng.standard_normal((4, 4))]
        report = ag.gradient_check(f, inputs, tol_rel=1e-3)
        assert report.passed, str(report)
