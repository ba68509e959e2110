"""Gradient correctness for the reverse-mode tape."""

import numpy as np
import pytest

from dbrf import autodiff as ad
from dbrf.errors import ConfigurationError, NumericsError


def _param(rng, *shape):
    return ad.Tensor(rng.normal(size=shape), requires_grad=True)


class TestPrimitives:
    def test_add_mul_broadcast(self):
        rng = np.random.default_rng(0)
        a = _param(rng, 4, 3)
        b = _param(rng, 3)  # broadcasts across rows
        err = ad.grad_check(lambda: ad.tsum(ad.mul(ad.add(a, b), a)), [a, b])
        assert err < 1e-6

    def test_matmul(self):
        rng = np.random.default_rng(1)
        a = _param(rng, 5, 4)
        b = _param(rng, 4, 3)
        err = ad.grad_check(lambda: ad.tsum(ad.square(ad.matmul(a, b))), [a, b])
        assert err < 1e-6

    def test_linear_matches_matmul(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(6, 4))
        w = _param(rng, 3, 4)
        b = _param(rng, 3)
        out = ad.linear(ad.Tensor(x), w, b)
        np.testing.assert_allclose(out.value, x @ w.value.T + b.value)
        err = ad.grad_check(lambda: ad.tsum(ad.square(ad.linear(ad.Tensor(x), w, b))), [w, b])
        assert err < 1e-6

    def test_relu_sigmoid_exp_log(self):
        rng = np.random.default_rng(3)
        a = _param(rng, 8)
        # shift into the strictly positive range for log
        err = ad.grad_check(
            lambda: ad.tsum(ad.log(ad.add(ad.exp(ad.sigmoid(ad.relu(a))), 0.5))), [a])
        assert err < 1e-5

    def test_clip_blocks_gradient_outside_range(self):
        a = ad.Tensor(np.array([-2.0, 0.0, 2.0]), requires_grad=True)
        out = ad.tsum(ad.clip(a, -1.0, 1.0))
        ad.backward(out)
        np.testing.assert_array_equal(a.grad, [0.0, 1.0, 0.0])

    def test_sum_axis_and_mean(self):
        rng = np.random.default_rng(4)
        a = _param(rng, 5, 3)
        err = ad.grad_check(lambda: ad.tsum(ad.square(ad.tsum(a, axis=1))), [a])
        assert err < 1e-6
        err = ad.grad_check(lambda: ad.tmean(ad.square(a)), [a])
        assert err < 1e-6

    def test_concat_and_take_cols(self):
        rng = np.random.default_rng(5)
        a = _param(rng, 4, 2)
        b = _param(rng, 4, 3)
        cols = np.array([0, 2, 4])

        def loss():
            joined = ad.concat_cols(a, b)
            return ad.tsum(ad.square(ad.take_cols(joined, cols)))

        assert ad.grad_check(loss, [a, b]) < 1e-6

    def test_take_cols_repeated_index_accumulates(self):
        a = ad.Tensor(np.ones((2, 3)), requires_grad=True)
        out = ad.tsum(ad.take_cols(a, np.array([1, 1])))
        ad.backward(out)
        np.testing.assert_array_equal(a.grad, [[0, 2, 0], [0, 2, 0]])

    def test_reshape(self):
        rng = np.random.default_rng(6)
        a = _param(rng, 6)
        err = ad.grad_check(lambda: ad.tsum(ad.square(ad.reshape(a, (2, 3)))), [a])
        assert err < 1e-6


class TestBCEWithLogits:
    def test_matches_naive_formula_in_safe_range(self):
        rng = np.random.default_rng(7)
        l = rng.normal(size=20)
        t = rng.integers(0, 2, size=20).astype(float)
        got = ad.bce_with_logits(ad.Tensor(l), ad.Tensor(t)).value
        p = 1.0 / (1.0 + np.exp(-l))
        want = -t * np.log(p) - (1 - t) * np.log(1 - p)
        np.testing.assert_allclose(got, want, rtol=1e-12)

    def test_extreme_logits_stay_finite(self):
        l = ad.Tensor(np.array([-800.0, 800.0, 0.0]), requires_grad=True)
        t = np.array([1.0, 0.0, 1.0])
        out = ad.tsum(ad.bce_with_logits(l, t))
        assert np.isfinite(out.value)
        ad.backward(out)
        assert np.all(np.isfinite(l.grad))
        # saturated-but-correct-side logits: loss ~ |l|, grad ~ -1 / +1
        np.testing.assert_allclose(l.grad, [-1.0, 1.0, -0.5], atol=1e-10)

    def test_gradient(self):
        rng = np.random.default_rng(8)
        l = _param(rng, 12)
        t = rng.integers(0, 2, size=12).astype(float)
        err = ad.grad_check(lambda: ad.tsum(ad.bce_with_logits(l, t)), [l])
        assert err < 1e-6

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ConfigurationError):
            ad.bce_with_logits(ad.Tensor(np.zeros(3)), np.zeros(4))


class TestTape:
    def test_diamond_graph_accumulates_once_per_path(self):
        # y = a*a + a*a reuses the same product node twice via different paths
        a = ad.Tensor(2.0, requires_grad=True)
        sq = ad.mul(a, a)
        out = ad.add(sq, sq)
        ad.backward(out)
        assert a.grad == pytest.approx(8.0)

    def test_detach_stops_gradient(self):
        a = ad.Tensor(3.0, requires_grad=True)
        out = ad.mul(a.detach(), a)  # d/da = a.value, not 2a
        ad.backward(out)
        assert a.grad == pytest.approx(3.0)

    def test_constant_subgraph_untracked(self):
        a = ad.Tensor(1.0)
        b = ad.Tensor(2.0)
        out = ad.mul(a, b)
        assert not out.requires_grad and out._vjp is None

    def test_grads_accumulate_across_backward_calls(self):
        a = ad.Tensor(2.0, requires_grad=True)
        for _ in range(2):
            ad.backward(ad.mul(a, a))
        assert a.grad == pytest.approx(8.0)
        ad.zero_grads([a])
        assert a.grad is None

    def test_mlp_composite_gradient(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(10, 5))
        t = rng.integers(0, 2, size=(10, 1)).astype(float)
        w1, b1 = _param(rng, 16, 5), _param(rng, 16)
        w2, b2 = _param(rng, 1, 16), _param(rng, 1)

        def loss():
            h = ad.relu(ad.linear(ad.Tensor(x), w1, b1))
            return ad.tmean(ad.bce_with_logits(ad.linear(h, w2, b2), t))

        assert ad.grad_check(loss, [w1, b1, w2, b2], max_entries=40) < 1e-5


class TestGradCheckGuards:
    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nonfinite_loss_raises(self):
        a = ad.Tensor(-1.0, requires_grad=True)
        with pytest.raises(NumericsError):
            ad.grad_check(lambda: ad.log(a), [a])

    def test_nonscalar_loss_rejected(self):
        a = ad.Tensor(np.zeros(3), requires_grad=True)
        with pytest.raises(ConfigurationError):
            ad.grad_check(lambda: ad.mul(a, 2.0), [a])

    def test_matmul_requires_2d(self):
        with pytest.raises(ConfigurationError):
            ad.matmul(ad.Tensor(np.zeros(3)), ad.Tensor(np.zeros((3, 2))))

    def test_tensor_division_by_tensor_rejected(self):
        with pytest.raises(ConfigurationError):
            ad.Tensor(1.0) / ad.Tensor(2.0)
