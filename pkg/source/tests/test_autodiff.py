from __future__ import annotations

import dataclasses
import unittest

import numpy as np

from helpers import (
    bootstrap_tests,
    max_relative_error,
    numeric_grad,
    tiny_dataset,
    tiny_n1_spec,
    tiny_n2_spec,
    with_random_view2,
)

bootstrap_tests()

from core import autodiff as ad  # noqa: E402
from core.errors import ContractError, DimensionError  # noqa: E402
from core.losses import bce_multilabel, sym_gkl  # noqa: E402
from core.networks import build_network  # noqa: E402
from services.training_service import batch_loss  # noqa: E402

TOLERANCE = 1e-4
# Small enough that a perturbation rarely crosses a ReLU or max-pool kink.
COMPOSED_STEP = 1e-6


def _away_from_zero(rng: np.random.Generator, shape, margin: float = 0.1) -> np.ndarray:
    return rng.choice([-1.0, 1.0], size=shape) * (margin + np.abs(rng.normal(size=shape)))


def _distinct(rng: np.random.Generator, shape) -> np.ndarray:
    """Values at least 0.05 apart so perturbations never swap a max-pool winner."""
    size = int(np.prod(shape))
    return (rng.permutation(size) * 0.05 + 0.01 * rng.random(size)).reshape(shape)


class GradientCheckTests(unittest.TestCase):
    def assert_gradients(self, build, arrays, rng):
        arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
        with ad.no_grad():
            sample = build(*[ad.Tensor(a) for a in arrays])
        weights = rng.normal(size=sample.shape)

        def loss_of(values):
            tensors = [ad.Tensor(v, requires_grad=True) for v in values]
            return ad.sum_(ad.mul(build(*tensors), ad.Tensor(weights))), tensors

        loss, tensors = loss_of(arrays)
        ad.backward(loss)
        for k in range(len(arrays)):

            def scalar(value, k=k):
                values = list(arrays)
                values[k] = value
                with ad.no_grad():
                    return float(loss_of(values)[0].data)

            numeric = numeric_grad(scalar, arrays[k])
            error = max_relative_error(tensors[k].grad, numeric)
            self.assertLess(error, TOLERANCE, msg=f"input {k}: relative error {error:.2e}")

    def test_elementwise_and_broadcasting(self):
        rng = np.random.default_rng(0)
        for _ in range(15):
            rows, cols = rng.integers(1, 5, size=2)
            a = rng.normal(size=(rows, cols))
            b = rng.normal(size=(cols,))
            self.assert_gradients(ad.add, [a, b], rng)
            self.assert_gradients(ad.sub, [a, b], rng)
            self.assert_gradients(ad.mul, [a, b], rng)
            self.assert_gradients(lambda x: ad.scalar_mul(x, 0.7), [a], rng)
            self.assert_gradients(lambda x: ad.add_scalar(x, -1.3), [a], rng)

    def test_unary_ops(self):
        rng = np.random.default_rng(1)
        for _ in range(15):
            shape = tuple(rng.integers(1, 5, size=2))
            self.assert_gradients(ad.relu, [_away_from_zero(rng, shape)], rng)
            self.assert_gradients(ad.sigmoid, [rng.normal(scale=3.0, size=shape)], rng)
            self.assert_gradients(ad.log, [0.2 + rng.random(shape)], rng)
            straddling = rng.choice([-0.9, -0.2, 0.2, 0.9], size=shape) + 0.05 * rng.random(shape)
            self.assert_gradients(lambda x: ad.clamp(x, -0.5, 0.5), [straddling], rng)

    def test_reductions_and_reshape(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            x = rng.normal(size=tuple(rng.integers(1, 4, size=3)))
            self.assert_gradients(ad.sum_, [x], rng)
            self.assert_gradients(lambda t: ad.sum_(t, axis=1), [x], rng)
            self.assert_gradients(ad.mean, [x], rng)
            self.assert_gradients(lambda t: ad.mean(t, axis=(0, 2)), [x], rng)
            self.assert_gradients(lambda t: ad.reshape(t, (-1,)), [x], rng)

    def test_matmul(self):
        rng = np.random.default_rng(3)
        for _ in range(15):
            m, k, n = rng.integers(1, 5, size=3)
            self.assert_gradients(ad.matmul, [rng.normal(size=(m, k)), rng.normal(size=(k, n))], rng)

    def test_conv2d(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            c_in, c_out = rng.integers(1, 4, size=2)
            h, w = rng.integers(2, 6, size=2)
            kh, kw = rng.integers(1, 4, size=2)
            ph, pw = rng.integers(0, 2, size=2)
            if kh > h + 2 * ph or kw > w + 2 * pw:
                continue
            stride = tuple(int(s) for s in rng.integers(1, 3, size=2))
            x = rng.normal(size=(c_in, h, w))
            f = rng.normal(size=(c_out, c_in, kh, kw))
            self.assert_gradients(lambda a, b: ad.conv2d(a, b, stride=stride, pad=(int(ph), int(pw))), [x, f], rng)

    def test_maxpool2d(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            c, h, w = int(rng.integers(1, 4)), int(rng.integers(1, 4)), 2 * int(rng.integers(1, 4))
            self.assert_gradients(ad.maxpool2d, [_distinct(rng, (c, h, w))], rng)

    def test_batch_norm(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            c, h, w = int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(2, 5))
            x = rng.normal(size=(c, h, w))
            gamma = 0.5 + rng.random(c)
            beta = rng.normal(size=c)
            self.assert_gradients(lambda a, g, b: ad.batch_norm(a, g, b)[0], [x, gamma, beta], rng)
            rm, rv = rng.normal(size=c), 0.5 + rng.random(c)
            self.assert_gradients(lambda a, g, b: ad.batch_norm_inference(a, g, b, rm, rv), [x, gamma, beta], rng)

    def test_losses(self):
        rng = np.random.default_rng(7)
        for _ in range(15):
            c = int(rng.integers(1, 8))
            y = (rng.random(c) < 0.5).astype(np.float64)
            p = 0.05 + 0.9 * rng.random(c)
            q = 0.05 + 0.9 * rng.random(c)
            self.assert_gradients(lambda t: bce_multilabel(t, y), [p], rng)
            self.assert_gradients(sym_gkl, [p, q], rng)


class ComposedGradientTests(unittest.TestCase):
    def test_joint_loss_gradient_over_both_networks(self):
        networks = [
            build_network(tiny_n1_spec(), name="n1", seed=5).train(),
            build_network(dataclasses.replace(tiny_n2_spec(), dropout_p=0.0), name="n2", seed=5).train(),
        ]
        batch = with_random_view2(tiny_dataset(n=3, fp_rates=[0.5, 0.0, 0.0], seed=4), dim=8).training_view()

        def loss_value() -> float:
            with ad.no_grad():
                return float(batch_loss(networks, batch, (0.7,))[0].data)

        loss, _ = batch_loss(networks, batch, (0.7,))
        ad.backward(loss)
        rng = np.random.default_rng(8)
        checked = 0
        for net in networks:
            for name, param in net.params.items():
                analytic = param.grad.reshape(-1).copy()
                flat = param.data.reshape(-1)
                for i in rng.choice(flat.size, size=min(3, flat.size), replace=False):
                    saved = flat[i]
                    flat[i] = saved + COMPOSED_STEP
                    up = loss_value()
                    flat[i] = saved - COMPOSED_STEP
                    down = loss_value()
                    flat[i] = saved
                    numeric = (up - down) / (2 * COMPOSED_STEP)
                    with self.subTest(network=net.name, param=name, index=int(i)):
                        self.assertLessEqual(
                            abs(analytic[i] - numeric), TOLERANCE * max(abs(analytic[i]), abs(numeric)) + 1e-8
                        )
                    checked += 1
        self.assertGreater(checked, 20)


class GraphTests(unittest.TestCase):
    def test_reused_tensor_accumulates(self):
        x = ad.Tensor([1.5, -2.0], requires_grad=True)
        ad.backward(ad.sum_(ad.mul(x, x)))
        np.testing.assert_allclose(x.grad, [3.0, -4.0])

    def test_records_are_topologically_ordered(self):
        x = ad.Tensor([1.0, 2.0], requires_grad=True)
        hidden = ad.relu(x)
        loss = ad.sum_(ad.mul(hidden, hidden))
        ops = [node.op for node in ad.Graph.trace(loss).records]
        self.assertEqual(ops, ["relu", "mul", "sum"])

    def test_backward_rejects_non_scalar(self):
        x = ad.Tensor([1.0, 2.0], requires_grad=True)
        with self.assertRaises(ContractError):
            ad.backward(ad.relu(x))

    def test_no_grad_records_nothing(self):
        x = ad.Tensor([1.0, 2.0], requires_grad=True)
        with ad.no_grad():
            y = ad.sum_(ad.mul(x, x))
        self.assertIsNone(y.node)
        with self.assertRaises(ContractError):
            ad.backward(y)

    def test_elementwise_dispatches_by_kind(self):
        rng = np.random.default_rng(11)
        x = ad.Tensor(0.2 + rng.random((2, 3)))
        y = ad.Tensor(rng.normal(size=(2, 3)))
        direct = {
            "relu": ad.relu(y),
            "sigmoid": ad.sigmoid(y),
            "log": ad.log(x),
            "add": ad.add(x, y),
            "sub": ad.sub(x, y),
            "mul": ad.mul(x, y),
            "scalar_mul": ad.scalar_mul(x, 0.25),
        }
        operands = {"relu": (y, None), "sigmoid": (y, None), "log": (x, None), "scalar_mul": (x, 0.25)}
        for kind, expected in direct.items():
            first, second = operands.get(kind, (x, y))
            with self.subTest(kind=kind):
                np.testing.assert_array_equal(ad.elementwise(kind, first, second).data, expected.data)
        with self.assertRaises(ContractError):
            ad.elementwise("tanh", x)
        with self.assertRaises(ContractError):
            ad.elementwise("mul", x, 2.0)
        with self.assertRaises(ContractError):
            ad.elementwise("scalar_mul", x, y)

    def test_shape_errors(self):
        with self.assertRaises(DimensionError):
            ad.add(ad.Tensor(np.zeros(3)), ad.Tensor(np.zeros(4)))
        with self.assertRaises(DimensionError):
            ad.matmul(ad.Tensor(np.zeros((2, 3))), ad.Tensor(np.zeros((2, 3))))
        with self.assertRaises(DimensionError):
            ad.maxpool2d(ad.Tensor(np.zeros((1, 2, 3))))

    def test_log_needs_positive_input(self):
        with self.assertRaises(ContractError):
            ad.log(ad.Tensor([0.0, 1.0]))

    def test_conv2d_output_shape(self):
        out = ad.conv2d(ad.Tensor(np.zeros((1, 10, 128))), ad.Tensor(np.zeros((4, 1, 3, 3))), pad=(1, 1))
        self.assertEqual(out.shape, (4, 10, 128))

    def test_maxpool_ties_route_to_first(self):
        x = ad.Tensor(np.ones((1, 1, 2)), requires_grad=True)
        ad.backward(ad.sum_(ad.maxpool2d(x)))
        np.testing.assert_array_equal(x.grad, [[[1.0, 0.0]]])


if __name__ == "__main__":
    unittest.main()
