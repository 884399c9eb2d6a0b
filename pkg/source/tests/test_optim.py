from __future__ import annotations

import dataclasses
import unittest

import numpy as np

from helpers import bootstrap_tests, tiny_dataset, tiny_n1_spec, tiny_n2_spec, with_random_view2

bootstrap_tests()

from core.autodiff import Tensor, backward, no_grad  # noqa: E402
from core.errors import ContractError  # noqa: E402
from core.networks import build_network  # noqa: E402
from services.optim import ADAM_EPS, LEARNING_RATE_GRID, AdamState, adam_step  # noqa: E402
from services.training_service import batch_loss  # noqa: E402


class AdamTests(unittest.TestCase):
    def test_first_step_moves_by_learning_rate_against_gradient(self):
        params = {"w": Tensor([1.0, -2.0, 0.5], requires_grad=True)}
        params["w"].grad = np.array([0.3, -4.0, 1e-3])
        state = AdamState.for_params(params, lr=0.01)
        adam_step(state, params)
        g = np.array([0.3, -4.0, 1e-3])
        expected = np.array([1.0, -2.0, 0.5]) - 0.01 * g / (np.abs(g) + ADAM_EPS)
        np.testing.assert_allclose(params["w"].data, expected, rtol=1e-12)
        self.assertIsNone(params["w"].grad)
        self.assertEqual(state.t, 1)

    def test_second_step_uses_bias_corrected_moments(self):
        params = {"w": Tensor([0.0], requires_grad=True)}
        state = AdamState.for_params(params, lr=0.1)
        for g in (1.0, 3.0):
            params["w"].grad = np.array([g])
            adam_step(state, params)
        m = (0.9 * 0.1 * 1.0 + 0.1 * 3.0) / (1 - 0.9**2)
        v = (0.999 * 0.001 * 1.0 + 0.001 * 9.0) / (1 - 0.999**2)
        first = -0.1 * 1.0 / (1.0 + ADAM_EPS)
        np.testing.assert_allclose(params["w"].data, [first - 0.1 * m / (np.sqrt(v) + ADAM_EPS)], rtol=1e-12)

    def test_constant_gradient_steps_approach_learning_rate_times_sign(self):
        g = np.array([2.5, -0.01, 0.0])
        params = {"w": Tensor(np.zeros(3), requires_grad=True)}
        state = AdamState.for_params(params, lr=1e-3)
        moves = []
        for _ in range(200):
            before = params["w"].data.copy()
            params["w"].grad = g.copy()
            adam_step(state, params)
            moves.append(params["w"].data - before)
        np.testing.assert_allclose(moves[-1], -1e-3 * np.sign(g), rtol=1e-5, atol=0)
        np.testing.assert_allclose(params["w"].data, -0.2 * np.sign(g), rtol=1e-5, atol=0)

    def test_default_learning_rate_is_on_the_grid(self):
        self.assertIn(AdamState().lr, LEARNING_RATE_GRID)
        self.assertEqual(LEARNING_RATE_GRID, tuple(sorted(LEARNING_RATE_GRID)))


class AdamOnNetworksTests(unittest.TestCase):
    def test_small_steps_lower_the_joint_loss(self):
        networks = [
            build_network(tiny_n1_spec(), name="n1", seed=2).train(),
            build_network(dataclasses.replace(tiny_n2_spec(), dropout_p=0.0), name="n2", seed=2).train(),
        ]
        batch = with_random_view2(tiny_dataset(n=6, fp_rates=[0.3, 0.0, 0.0]), dim=8).training_view()
        optimizers = [AdamState.for_params(net.params, lr=1e-4) for net in networks]
        losses = []
        for _ in range(10):
            loss, _ = batch_loss(networks, batch, (1.0,))
            losses.append(float(loss.data))
            backward(loss)
            for net, optimizer in zip(networks, optimizers):
                adam_step(optimizer, net.params)
        with no_grad():
            losses.append(float(batch_loss(networks, batch, (1.0,))[0].data))
        decreases = sum(after < before for before, after in zip(losses, losses[1:]))
        self.assertGreaterEqual(decreases, 9, msg=f"losses {losses}")

    def test_missing_gradient_counts_as_zero(self):
        params = {"w": Tensor([2.0, 3.0], requires_grad=True)}
        state = AdamState.for_params(params, lr=0.5)
        adam_step(state, params)
        np.testing.assert_array_equal(params["w"].data, [2.0, 3.0])

    def test_rejects_foreign_parameters(self):
        state = AdamState.for_params({"w": Tensor([1.0])}, lr=0.1)
        with self.assertRaises(ContractError):
            adam_step(state, {"b": Tensor([1.0])})
        with self.assertRaises(ContractError):
            adam_step(state, {"w": Tensor([1.0, 2.0])})


if __name__ == "__main__":
    unittest.main()
