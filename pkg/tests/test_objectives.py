import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import toy
from dense_reference import naive_infonce
from simkgcl.objectives import (
    LossConfig,
    MissingCacheError,
    bpr_loss,
    compute_gradients,
    cosine_matrix,
    infonce_loss,
    l2_reg,
    regularized_rows,
    total_loss,
)
from simkgcl.propagation import ModelConfig, forward
from simkgcl.sampling import BprBatch


class TestBpr:
    def test_equal_scores(self):
        loss, g_pos, g_neg = bpr_loss(np.array([0.3]), np.array([0.3]))
        assert abs(loss - math.log(2)) <= 1e-12
        assert g_pos[0] == -0.5 and g_neg[0] == 0.5

    def test_large_margins_are_stable(self):
        loss, _, _ = bpr_loss(np.array([-800.0, 800.0]), np.array([0.0, 0.0]))
        assert loss == pytest.approx(800.0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            bpr_loss(np.zeros(2), np.zeros(3))


class TestInfoNce:
    def test_identical_pair_pinpoint(self):
        # two orthogonal nodes whose views equal their anchors: each term is log(1 + e^-1) at tau = 1
        a = np.array([[1.0, 0.0], [0.0, 2.0]])
        loss, _, _ = infonce_loss(a, a.copy(), 1.0)
        assert abs(loss / 2 - math.log(1 + math.exp(-1))) <= 1e-12

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_matches_double_loop(self, seed):
        rng = np.random.default_rng(seed)
        n, d = int(rng.integers(2, 8)), int(rng.integers(1, 6))
        a, v = rng.standard_normal((n, d)), rng.standard_normal((n, d))
        tau = float(rng.choice([0.1, 0.2, 0.5, 1.0]))
        loss, _, _ = infonce_loss(a, v, tau)
        assert loss == pytest.approx(naive_infonce(a, v, tau), rel=1e-10)
        assert loss >= 0

    def test_zero_row_guard(self):
        a = np.array([[0.0, 0.0], [1.0, 1.0], [1.0, -1.0]])
        v = np.array([[1.0, 0.0], [0.0, 0.0], [1.0, -1.0]])
        loss, ga, gv = infonce_loss(a, v, 0.5)
        assert np.isfinite(loss)
        assert np.all(ga[0] == 0) and np.all(gv[1] == 0)
        assert cosine_matrix(a, v)[0, 0] == 0

    def test_gradients_finite_difference(self):
        rng = np.random.default_rng(1)
        a, v = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
        _, ga, gv = infonce_loss(a, v, 0.2)
        h = 1e-6
        for arr, grad, is_anchor in ((a, ga, True), (v, gv, False)):
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + h
                up = infonce_loss(a, v, 0.2)[0]
                arr[idx] = old - h
                down = infonce_loss(a, v, 0.2)[0]
                arr[idx] = old
                assert grad[idx] == pytest.approx((up - down) / (2 * h), rel=1e-5, abs=1e-8)

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            infonce_loss(np.ones((2, 2)), np.ones((2, 2)), 0.0)
        with pytest.raises(ValueError):
            infonce_loss(np.ones((1, 2)), np.ones((1, 2)), 1.0)


class TestRegularizer:
    def test_counts_every_occurrence(self):
        ig, kg, p = toy.toy_problem()
        batch = BprBatch(np.array([0, 0]), np.array([1, 1]), np.array([2, 2]))
        value, grads = l2_reg(p, batch, kg.alignment)
        expect = (2 * np.sum(p.ig_user[0] ** 2) + 2 * np.sum(p.ig_item[1] ** 2) + 2 * np.sum(p.ig_item[2] ** 2)
                  + 2 * np.sum(p.kg_entity[1] ** 2) + 2 * np.sum(p.kg_entity[2] ** 2)) / 2
        assert value == pytest.approx(expect, rel=1e-12)
        np.testing.assert_allclose(grads["ig_user"][0], 2 * p.ig_user[0])
        assert "kg_relation" not in grads

    def test_entities_excluded_on_request(self):
        ig, kg, p = toy.toy_problem()
        names = [n for n, _ in regularized_rows(toy.BATCH, kg.alignment, reg_entities=False)]
        assert names == ["ig_user", "ig_item"]


class TestCombined:
    def test_total_composition(self):
        out = total_loss(0.7, 1.5, 2.5, 10.0, 0.1, 1e-4)
        assert out.total == pytest.approx(0.7 + 0.1 * 4.0 + 1e-4 * 10.0, abs=1e-15)
        assert out.cl == 4.0

    def test_gradient_check_on_toy(self):
        ig, kg, p = toy.toy_problem()
        assert toy.max_relative_error(p, ig, kg) < 1e-4

    @pytest.mark.parametrize("loss", [
        LossConfig(use_cl=False, reg_entities=False),
        LossConfig(tau=0.5, lambda1=1.0, cl_negatives=False),
    ])
    def test_gradient_check_variants(self, loss):
        ig, kg, p = toy.toy_problem(seed=3)
        assert toy.max_relative_error(p, ig, kg, loss=loss) < 1e-4

    def test_without_cl_matches_bpr_plus_reg(self):
        ig, kg, p = toy.toy_problem()
        losses, _ = compute_gradients(forward(p, ig, kg, toy.MODEL), toy.BATCH, LossConfig(use_cl=False))
        assert losses.cl == 0.0
        assert losses.total == pytest.approx(losses.bpr + 1e-4 * losses.reg, abs=1e-15)

    def test_missing_cache(self):
        with pytest.raises(MissingCacheError):
            compute_gradients(None, toy.BATCH)

    def test_single_forward_shared(self):
        ig, kg, p = toy.toy_problem()
        fwd = forward(p, ig, kg, ModelConfig(2))
        a, ga = compute_gradients(fwd, toy.BATCH, toy.LOSS)
        b, gb = compute_gradients(fwd, toy.BATCH, toy.LOSS)
        assert a == b
