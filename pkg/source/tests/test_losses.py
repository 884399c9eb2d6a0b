from __future__ import annotations

import math
import unittest

import numpy as np

from helpers import bootstrap_tests

bootstrap_tests()

from core import autodiff as ad  # noqa: E402
from core.errors import ContractError, DimensionError  # noqa: E402
from core.losses import (  # noqa: E402
    bce_multilabel,
    combined_loss,
    generalized_kl,
    get_divergence,
    network_pairs,
    sym_gkl,
    weblynet_loss,
)


def _div(a, b) -> float:
    with ad.no_grad():
        return sym_gkl(ad.Tensor(a), ad.Tensor(b)).item()


class DivergenceTests(unittest.TestCase):
    def test_worked_examples(self):
        self.assertAlmostEqual(_div([0.5, 0.5], [0.5, 0.5]), 0.0, places=12)
        self.assertAlmostEqual(_div([1.0], [0.5]), 0.5 * math.log(2.0), places=12)
        self.assertAlmostEqual(_div([0.8], [0.2]), 0.6 * math.log(4.0), places=12)
        self.assertAlmostEqual(_div([0.8, 0.2], [0.2, 0.8]), 1.2 * math.log(4.0), places=12)

    def test_properties_over_random_pairs(self):
        rng = np.random.default_rng(11)
        for _ in range(10_000):
            c = int(rng.integers(1, 6))
            x = 0.01 + 0.98 * rng.random(c)
            y = 0.01 + 0.98 * rng.random(c)
            forward, reverse = _div(x, y), _div(y, x)
            self.assertLess(abs(forward - reverse), 1e-12)
            self.assertGreater(forward, 0.0)
            self.assertLess(abs(forward - (generalized_kl(x, y) + generalized_kl(y, x))), 1e-12)
            self.assertAlmostEqual(_div(x, x), 0.0, places=12)

    def test_length_mismatch(self):
        with self.assertRaises(DimensionError):
            sym_gkl(ad.Tensor([0.5, 0.5]), ad.Tensor([0.5]))

    def test_unknown_divergence(self):
        self.assertIs(get_divergence("sym_gkl"), sym_gkl)
        with self.assertRaises(ContractError):
            get_divergence("wasserstein")


class BceTests(unittest.TestCase):
    def test_value(self):
        with ad.no_grad():
            loss = bce_multilabel(ad.Tensor([0.9, 0.2]), np.array([1.0, 0.0])).item()
        self.assertAlmostEqual(loss, -(math.log(0.9) + math.log(0.8)) / 2, places=12)
        with ad.no_grad():
            self.assertAlmostEqual(bce_multilabel(ad.Tensor([0.5]), np.array([1.0])).item(), math.log(2.0), places=12)
            half = bce_multilabel(ad.Tensor([0.5, 0.5]), np.array([1.0, 0.0])).item()
        self.assertAlmostEqual(half, math.log(2.0), places=12)

    def test_gradient_matches_closed_form(self):
        p = ad.Tensor([0.3, 0.6, 0.9], requires_grad=True)
        y = np.array([1.0, 0.0, 1.0])
        ad.backward(bce_multilabel(p, y))
        expected = (p.data - y) / (p.data * (1.0 - p.data)) / 3.0
        np.testing.assert_allclose(p.grad, expected, rtol=1e-10)

    def test_saturated_outputs_stay_finite(self):
        with ad.no_grad():
            loss = bce_multilabel(ad.Tensor([0.0, 1.0]), np.array([1.0, 0.0])).item()
        self.assertTrue(math.isfinite(loss))


class CombinedLossTests(unittest.TestCase):
    def test_breakdown_recomposes_total(self):
        outs = [ad.Tensor([0.7, 0.2]), ad.Tensor([0.6, 0.4])]
        y = np.array([1.0, 0.0])
        with ad.no_grad():
            total, breakdown = weblynet_loss(outs, y, [0.5])
        self.assertAlmostEqual(breakdown.total, total.item(), places=12)
        self.assertAlmostEqual(breakdown.recomposed_total(), breakdown.total, places=12)
        bce = bce_multilabel(outs[0], y).item() + bce_multilabel(outs[1], y).item()
        expected = bce + 0.5 * _div(outs[0].data, outs[1].data)
        self.assertAlmostEqual(breakdown.total, expected, places=12)

    def test_zero_alpha_is_sum_of_bce(self):
        outs = [ad.Tensor([0.7, 0.2]), ad.Tensor([0.6, 0.4])]
        y = np.array([0.0, 1.0])
        with ad.no_grad():
            _, breakdown = weblynet_loss(outs, y, [0.0])
        self.assertAlmostEqual(breakdown.total, sum(breakdown.per_network_bce), places=12)

    def test_three_networks_use_every_pair(self):
        self.assertEqual(network_pairs(3), [(0, 1), (0, 2), (1, 2)])
        outs = [ad.Tensor([0.7]), ad.Tensor([0.5]), ad.Tensor([0.2])]
        with ad.no_grad():
            _, breakdown = weblynet_loss(outs, np.array([1.0]), [1.0, 1.0, 1.0])
        self.assertEqual(len(breakdown.per_pair_divergence), 3)

    def test_contract_violations(self):
        outs = [ad.Tensor([0.7]), ad.Tensor([0.5])]
        with self.assertRaises(ContractError):
            weblynet_loss(outs[:1], np.array([1.0]), [])
        with self.assertRaises(ContractError):
            weblynet_loss(outs, np.array([1.0]), [1.0, 1.0])
        with self.assertRaises(ContractError):
            combined_loss(outs, np.array([1.0]), [-0.1])
        with self.assertRaises(ContractError):
            combined_loss([], np.array([1.0]), [])

    def test_single_network_is_plain_bce(self):
        with ad.no_grad():
            _, breakdown = combined_loss([ad.Tensor([0.4])], np.array([1.0]), [])
        self.assertAlmostEqual(breakdown.total, -math.log(0.4), places=12)


if __name__ == "__main__":
    unittest.main()
