import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from analystnet import autodiff as ad
from analystnet.autodiff import Adam, Tensor
from analystnet.errors import NumericalError, ShapeError


def finite_diff_ok(loss_fn, params, tol=1e-4):
    return ad.gradient_check(loss_fn, params) < tol


class TestForwardOps:
    def test_masked_softmax_single_entry_is_one(self):
        s = Tensor(np.array([[5.0, -2.0, 0.5]]))
        mask = np.array([[False, True, False]])
        out = ad.masked_softmax(s, mask)
        assert out.data == pytest.approx(np.array([[0.0, 1.0, 0.0]]))

    def test_masked_softmax_closed_form(self):
        s = Tensor(np.array([[math.log(2.0), 0.0, 99.0]]))
        mask = np.array([[True, True, False]])
        out = ad.masked_softmax(s, mask)
        assert out.data[0, 0] == pytest.approx(2.0 / 3.0, abs=1e-12)
        assert out.data[0, 1] == pytest.approx(1.0 / 3.0, abs=1e-12)
        assert out.data[0, 2] == 0.0

    def test_masked_softmax_empty_row_rejected(self):
        s = Tensor(np.zeros((2, 2)))
        mask = np.array([[True, True], [False, False]])
        with pytest.raises(NumericalError, match="self-loop"):
            ad.masked_softmax(s, mask)

    def test_bce_perfect_prediction_is_clamped_zero(self):
        y = np.array([[1.0], [0.0], [1.0]])
        loss = ad.bce_loss(Tensor(y.copy()), y)
        assert abs(loss.item()) < 1e-6

    def test_bce_known_value(self):
        p = Tensor(np.array([[0.8], [0.4]]))
        y = np.array([[1.0], [0.0]])
        expected = (-math.log(0.8) - math.log(0.6)) / 2.0
        assert ad.bce_loss(p, y).item() == pytest.approx(expected, rel=1e-12)

    def test_matmul_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_attention_softmax_matches_composition(self):
        rng = np.random.default_rng(3)
        n, blocks = 6, 3
        f = Tensor(rng.standard_normal((blocks * n, 1)))
        g = Tensor(rng.standard_normal((blocks * n, 1)))
        mask = rng.random((blocks * n, n)) < 0.5
        mask[:, 0] = True  # keep every row non-empty
        composed = ad.masked_softmax(
            ad.leaky_relu(ad.outer_sum_blocked(f, g, blocks), 0.2), mask)
        fused = ad.attention_softmax(f, g, mask, ad.mask_offset(mask), blocks)
        np.testing.assert_array_equal(fused.data, composed.data)

    @given(st.integers(0, 2 ** 32 - 1))
    def test_masked_softmax_rows_sum_to_one(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 12))
        scores = Tensor(rng.standard_normal((n, n)) * 10.0)
        mask = rng.random((n, n)) < 0.4
        mask[np.arange(n), np.arange(n)] = True
        out = ad.masked_softmax(scores, mask)
        np.testing.assert_allclose(out.data.sum(axis=1), 1.0, atol=1e-9)
        assert (out.data[~mask] == 0.0).all()


class TestBackward:
    def test_sum_of_matmul_gives_outer_product_gradient(self):
        rng = np.random.default_rng(0)
        w = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
        x = Tensor(rng.standard_normal((3, 2)))
        ad.tensor_sum(ad.matmul(w, x)).backward()
        expected = np.tile(x.data.sum(axis=1), (4, 1))
        np.testing.assert_allclose(w.grad, expected, atol=1e-12)
        assert finite_diff_ok(lambda: ad.tensor_sum(ad.matmul(w, x)), [w])

    def test_unused_parameter_gets_zero_gradient(self):
        w = Tensor(np.ones((2, 2)), requires_grad=True)
        unused = Tensor(np.ones((2, 2)), requires_grad=True)
        ad.tensor_sum(ad.relu(w)).backward()
        assert unused.grad is None  # zero by convention
        zeroed = ad.tensor_sum(ad.scale(ad.matmul(unused, w), 0.0))
        zeroed.backward()
        np.testing.assert_array_equal(unused.grad, np.zeros((2, 2)))

    def test_backward_requires_scalar(self):
        w = Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(ShapeError, match="scalar"):
            ad.relu(w).backward()

    def test_repeated_backward_accumulates(self):
        w = Tensor(np.ones((2, 2)), requires_grad=True)
        loss = ad.tensor_sum(w)
        loss.backward()
        loss.backward()
        np.testing.assert_array_equal(w.grad, 2.0 * np.ones((2, 2)))

    def test_fanin_through_passthrough_op_does_not_alias(self):
        x = Tensor(np.array([[3.0]]), requires_grad=True)
        ad.tensor_sum(ad.add(x, x)).backward()
        assert x.grad[0, 0] == 2.0

    @pytest.mark.parametrize("build", [
        lambda a, b: ad.tensor_sum(ad.relu(ad.matmul(a, b))),
        lambda a, b: ad.tensor_sum(ad.leaky_relu(ad.matmul(a, b), 0.2)),
        lambda a, b: ad.tensor_sum(ad.sigmoid(ad.matmul(a, b))),
        lambda a, b: ad.tensor_sum(ad.mul(a, a)) if b is None else
        ad.tensor_sum(ad.mul(ad.matmul(a, b), ad.matmul(a, b))),
        lambda a, b: ad.tensor_sum(ad.concat_cols(ad.matmul(a, b), a)),
        lambda a, b: ad.tensor_sum(ad.transpose(ad.matmul(a, b))),
    ])
    def test_op_gradients_match_finite_differences(self, build):
        rng = np.random.default_rng(7)
        a = Tensor(rng.standard_normal((3, 3)) + 0.7, requires_grad=True)
        b = Tensor(rng.standard_normal((3, 3)))
        assert finite_diff_ok(lambda: build(a, b), [a])

    def test_add_bias_gradient(self):
        rng = np.random.default_rng(8)
        x = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
        bias = Tensor(rng.standard_normal((1, 3)), requires_grad=True)
        assert finite_diff_ok(
            lambda: ad.tensor_sum(ad.sigmoid(ad.add_bias(x, bias))), [x, bias])

    def test_masked_softmax_gradient(self):
        rng = np.random.default_rng(9)
        s = Tensor(rng.standard_normal((5, 5)), requires_grad=True)
        mask = rng.random((5, 5)) < 0.5
        mask[np.arange(5), np.arange(5)] = True
        weights = Tensor(rng.standard_normal((5, 1)))

        def loss_fn():
            return ad.tensor_sum(ad.matmul(ad.masked_softmax(s, mask), weights))

        assert finite_diff_ok(loss_fn, [s])

    def test_blocked_ops_gradient(self):
        rng = np.random.default_rng(10)
        f = Tensor(rng.standard_normal((6, 1)), requires_grad=True)
        g = Tensor(rng.standard_normal((6, 1)), requires_grad=True)
        h = Tensor(rng.standard_normal((6, 2)), requires_grad=True)
        mask = np.ones((6, 3), dtype=bool)

        def loss_fn():
            alpha = ad.attention_softmax(f, g, mask, ad.mask_offset(mask), 2)
            return ad.tensor_sum(ad.matmul_blocked(alpha, h, 2))

        assert finite_diff_ok(loss_fn, [f, g, h])

    def test_bce_gradient(self):
        rng = np.random.default_rng(11)
        logits = Tensor(rng.standard_normal((6, 1)), requires_grad=True)
        y = (rng.random((6, 1)) < 0.5).astype(float)

        def loss_fn():
            return ad.bce_loss(ad.sigmoid(logits), y, (0.8, 1.4))

        assert finite_diff_ok(loss_fn, [logits])


class TestAdam:
    def test_zero_gradient_leaves_parameters_unchanged(self):
        p = Tensor(np.array([[1.5, -2.0]]), requires_grad=True)
        before = p.data.copy()
        Adam([p], lr=0.1).step()
        np.testing.assert_array_equal(p.data, before)

    def test_first_step_moves_by_learning_rate(self):
        p = Tensor(np.array([[1.0]]), requires_grad=True)
        p.grad = np.array([[0.37]])
        Adam([p], lr=0.01).step()
        assert p.data[0, 0] == pytest.approx(1.0 - 0.01, abs=1e-6)
        assert p.grad is None

    def test_quadratic_bowl_converges(self):
        w = Tensor(np.array([[3.0]]), requires_grad=True)
        opt = Adam([w], lr=0.1)
        for _ in range(200):
            ad.tensor_sum(ad.mul(w, w)).backward()
            opt.step()
        assert abs(w.data[0, 0]) < 1e-3

    def test_decoupled_weight_decay_shrinks_parameters(self):
        p = Tensor(np.array([[2.0]]), requires_grad=True)
        p.grad = np.array([[0.0]])
        Adam([p], lr=0.1, weight_decay=0.5).step()
        assert p.data[0, 0] == pytest.approx(2.0 * (1.0 - 0.1 * 0.5))
