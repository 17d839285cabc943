import math

import numpy as np
import pytest

from hearken import models, nnet
from hearken.errors import ShapeError
from hearken.nnet import (
    Conv3x3, Dropout, Flatten, Linear, MaxPool, Network, ReLU, SgdMomentum, Softmax,
    batch_loss_and_grads, cross_entropy_grad, cross_entropy_l1, grad_check, l1_subgradient,
)
from hearken.seeding import derive_rng


class TestLayerExamples:
    def test_conv_identity_kernel_crops_border(self):
        conv = Conv3x3(1, 1, dtype=np.float64)
        conv.W[0, 0, 1, 1] = 1.0  # centered delta
        x = np.random.default_rng(0).standard_normal((1, 1, 9, 7))
        y = conv.forward(x)
        np.testing.assert_array_equal(y[0, 0], x[0, 0, 1:-1, 1:-1])

    def test_maxpool_2x2(self):
        pool = MaxPool(2, 2)
        x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
        y = pool.forward(x)
        assert y.shape == (1, 1, 1, 1)
        assert y[0, 0, 0, 0] == 4.0

    def test_softmax_uniform_over_28(self):
        sm = Softmax()
        p = sm.forward(np.zeros((1, 28)))
        np.testing.assert_allclose(p, 1.0 / 28.0, atol=1e-12)

    def test_relu_nonnegative_pool_bounded(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((2, 3, 8, 8))
        assert np.all(ReLU().forward(x) >= 0)
        y = MaxPool(2, 2).forward(x)
        assert y.max() <= x.max()

    def test_conv_translation_equivariance(self):
        rng = np.random.default_rng(2)
        conv = Conv3x3(1, 2, dtype=np.float64)
        conv.init_params(rng)
        x = rng.standard_normal((1, 1, 12, 12))
        xs = np.roll(np.roll(x, 1, axis=2), 1, axis=3)
        y = conv.forward(x)
        ys = conv.forward(xs)
        # interior of the shifted output equals the shifted interior
        np.testing.assert_allclose(ys[:, :, 2:, 2:], y[:, :, 1:-1, 1:-1], atol=1e-12)

    def test_shape_error_names_layer(self):
        net = Network([Conv3x3(3, 4), Conv3x3(99, 4)])
        with pytest.raises(ShapeError, match="layer 1"):
            net.out_shape((3, 10, 10))


class TestCrossEntropy:
    def test_perfect_prediction_zero_loss(self):
        p = np.zeros((1, 4))
        p[0, 2] = 1.0
        assert cross_entropy_l1(p, [2]) == 0.0

    def test_uniform_28_closed_form(self):
        p = np.full((1, 28), 1.0 / 28.0)
        assert cross_entropy_l1(p, [0]) == pytest.approx(math.log(28.0), abs=1e-12)

    def test_l1_zero_weights_contribute_zero(self):
        p = np.full((1, 2), 0.5)
        w = np.zeros((5, 5))
        base = cross_entropy_l1(p, [0])
        assert cross_entropy_l1(p, [0], weights=[w], rho=1e-6) == base

    def test_l1_nonzero_matches_summation_oracle(self):
        rng = np.random.default_rng(3)
        ws = [rng.standard_normal((4, 7)), rng.standard_normal(11)]
        p = np.full((1, 2), 0.5)
        rho = 1e-6
        expected = math.log(2.0) + rho * sum(float(np.sum(np.abs(w))) for w in ws)
        assert cross_entropy_l1(p, [0], ws, rho) == pytest.approx(expected, rel=1e-12)

    def test_clamped_probability_finite(self):
        p = np.zeros((1, 3))
        p[0, 0] = 1.0
        loss = cross_entropy_l1(p, [1])
        assert np.isfinite(loss)
        assert loss == pytest.approx(-math.log(1e-12))


class TestSoftmaxProperties:
    def test_sums_to_one_and_shift_invariant(self):
        rng = np.random.default_rng(4)
        z = rng.standard_normal((16, 9)) * 5
        p1 = Softmax().forward(z)
        p2 = Softmax().forward(z + 13.7)
        np.testing.assert_allclose(p1.sum(axis=1), 1.0, atol=1e-6)
        np.testing.assert_allclose(p1, p2, atol=1e-9)
        assert np.array_equal(p1.argmax(axis=1), p2.argmax(axis=1))


class TestSgdMomentum:
    def _net(self, w0):
        lin = Linear(1, 1, dtype=np.float64)
        lin.W[0, 0] = w0
        net = Network([lin], dtype=np.float64)
        net.zero_grads()  # materialize dW for direct poking below
        return net

    def test_zero_gradient_no_change(self):
        net = self._net(2.0)
        opt = SgdMomentum(net, lr=0.1)
        net.zero_grads()
        opt.step()
        assert net.layers[0].W[0, 0] == 2.0

    def test_first_step_is_lr_times_grad(self):
        net = self._net(1.0)
        opt = SgdMomentum(net, lr=0.1, momentum=0.9)
        net.layers[0].dW[0, 0] = 3.0
        opt.step()
        assert net.layers[0].W[0, 0] == pytest.approx(1.0 - 0.1 * 3.0, abs=1e-15)

    def test_two_steps_constant_gradient_unroll(self):
        # unroll oracle: v1 = -lr*g; v2 = mu*v1 - lr*g; total = lr*g*(1 + (1 + mu))
        net = self._net(0.0)
        opt = SgdMomentum(net, lr=0.1, momentum=0.9)
        for _ in range(2):
            net.layers[0].dW[0, 0] = 1.0
            opt.step()
        assert net.layers[0].W[0, 0] == pytest.approx(-0.1 * (1.0 + 1.9), abs=1e-12)

    def test_step_on_convex_quadratic_reduces_loss(self):
        # f(w) = 0.5 * w^2, grad = w
        net = self._net(5.0)
        opt = SgdMomentum(net, lr=0.05, momentum=0.9)
        w_prev = 5.0
        for _ in range(10):
            net.layers[0].dW[0, 0] = net.layers[0].W[0, 0]
            opt.step()
        assert 0.5 * net.layers[0].W[0, 0] ** 2 < 0.5 * w_prev**2


class TestDropout:
    def test_eval_mode_passthrough(self):
        d = Dropout(0.5)
        x = np.random.default_rng(5).standard_normal((4, 10))
        np.testing.assert_array_equal(d.forward(x, mode="eval"), x)

    def test_train_matches_eval_expectation_statistically(self):
        # inverted dropout: a linear readout of the train-mode output matches
        # the eval-mode value in expectation, +/-2% over 10^4 masks
        rng = derive_rng(6, 0)
        d = Dropout(0.5)
        w = np.linspace(0.5, 1.5, 50)
        x = np.ones(50)
        eval_readout = float(d.forward(x, mode="eval") @ w)
        acc = 0.0
        n = 10000
        for _ in range(n):
            acc += float(d.forward(x, mode="train", rng=rng) @ w)
        assert abs(acc / n - eval_readout) / eval_readout < 0.02

    def test_backward_uses_same_mask(self):
        rng = derive_rng(7, 0)
        d = Dropout(0.5)
        x = np.ones((2, 8))
        y = d.forward(x, mode="train", rng=rng)
        g = d.backward(np.ones_like(x))
        np.testing.assert_array_equal(g, y)


class TestBackwardBasics:
    def _tiny_net(self, rng):
        return Network(
            [Conv3x3(2, 3, np.float64), ReLU(), MaxPool(2, 2), Flatten(),
             Linear(3 * 4 * 2, 8, np.float64), ReLU(), Linear(8, 3, np.float64), Softmax()],
            dtype=np.float64,
        ).init_params(rng)

    def test_zero_upstream_zero_param_grads(self):
        rng = derive_rng(8, 0)
        net = self._tiny_net(rng)
        x = rng.standard_normal((2, 2, 10, 6))
        net.zero_grads()
        net.forward(x, mode="eval")
        net.backward(np.zeros((2, 3)))
        for _, g in net.named_grads():
            np.testing.assert_array_equal(g, 0.0)

    def test_relu_blocks_gradient_at_negative_preactivation(self):
        r = ReLU()
        x = np.array([[-1.0, 2.0]])
        r.forward(x)
        g = r.backward(np.ones_like(x))
        np.testing.assert_array_equal(g, [[0.0, 1.0]])


class TestGradCheck:
    def test_linear_net_tight(self):
        rng = derive_rng(9, 0)
        net = Network([Linear(6, 4, np.float64), Softmax()], dtype=np.float64).init_params(rng)
        x = rng.standard_normal((3, 6))
        _, overall = grad_check(net, x, [0, 1, 2], rho=0.0, rng=rng)
        assert overall < 1e-6

    def test_conv_pool_relu_chain(self):
        rng = derive_rng(10, 0)
        net = Network(
            [Conv3x3(2, 3, np.float64), ReLU(), MaxPool(1, 2), Flatten(),
             Linear(3 * 6 * 3, 5, np.float64), Softmax()],
            dtype=np.float64,
        ).init_params(rng)
        x = rng.standard_normal((2, 2, 8, 8))
        _, overall = grad_check(net, x, [1, 3], rho=1e-6, rng=rng)
        assert overall < 1e-4

    def test_corrupted_gradient_detected(self):
        rng = derive_rng(11, 0)
        net = Network([Linear(5, 3, np.float64), Softmax()], dtype=np.float64).init_params(rng)
        x = rng.standard_normal((4, 5))
        _, overall = grad_check(net, x, [0, 1, 2, 0], rho=0.0, rng=rng, corrupt=".W")
        assert overall > 1e-3

    def test_l1_subgradient_sign_zero_is_zero(self):
        lin = Linear(2, 2, np.float64)
        lin.W[...] = [[0.0, 1.5], [-2.0, 0.0]]
        net = Network([lin], dtype=np.float64)
        net.zero_grads()
        l1_subgradient(net, rho=0.1)
        np.testing.assert_allclose(lin.dW, [[0.0, 0.1], [-0.1, 0.0]], atol=1e-15)


def test_batch_loss_and_grads_runs_train_mode():
    rng = derive_rng(12, 0)
    net = Network(
        [Linear(4, 8, np.float64), ReLU(), Dropout(0.5), Linear(8, 3, np.float64), Softmax()],
        dtype=np.float64,
    ).init_params(rng)
    x = rng.standard_normal((6, 4))
    loss, p = batch_loss_and_grads(net, x, [0, 1, 2, 0, 1, 2], rho=1e-6, mode="train", rng=rng)
    assert np.isfinite(loss)
    assert p.shape == (6, 3)
