from __future__ import annotations

import dataclasses
import os
import tempfile
import unittest
from pathlib import Path
from unittest import mock

from helpers import bootstrap_tests

bootstrap_tests()

from infra.settings import (  # noqa: E402
    DEFAULT_ALPHA_GRID,
    DEFAULT_SEEDS,
    LEDGER_FILE,
    config_fingerprint,
    load_settings,
)
from infra.utils import format_alpha, parse_float_list, parse_int_list, slug  # noqa: E402

CONFIG = """
data:
  source: synthetic
  synthetic:
    num_classes: 6
    n_train: 40
    embedding_dim: 32
    max_segments: 6
networks:
  width_scale: 0.0625
  time_kernel: 3
training:
  n_epochs: 3
  batch_size: 8
  learning_rates: [0.001, 0.0003]
  pretrain_epochs: 2
experiment:
  alpha_grid: "0, 0.5, 1"
  seeds: [3, 4]
  output_dir: out
  workers: 2
"""


class SettingsTests(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.root = Path(self._tmp.name)
        env = {k: v for k, v in os.environ.items() if not k.startswith("WEBLYNET_")}
        self._env = mock.patch.dict(os.environ, env, clear=True)
        self._env.start()

    def tearDown(self):
        self._env.stop()
        self._tmp.cleanup()

    def _write(self, text: str) -> Path:
        path = self.root / "config.yaml"
        path.write_text(text, encoding="utf-8")
        return path

    def test_yaml_values_are_read(self):
        cfg = load_settings(self._write(CONFIG))
        self.assertEqual(cfg.synthetic.num_classes, 6)
        self.assertEqual(cfg.synthetic.options.embedding_dim, 32)
        self.assertEqual(cfg.synthetic.options.max_segments, 6)
        self.assertEqual(cfg.networks.time_kernel, 3)
        self.assertEqual(cfg.train.learning_rates, (0.001, 0.0003))
        self.assertEqual(cfg.pretrain_epochs, 2)
        self.assertEqual(cfg.alpha_grid, (0.0, 0.5, 1.0))
        self.assertEqual(cfg.seeds, (3, 4))
        self.assertEqual(cfg.output_dir, self.root / "out")
        self.assertEqual(cfg.ledger_db, self.root / "out" / LEDGER_FILE)
        self.assertEqual(cfg.workers, 2)

    def test_defaults_without_a_file(self):
        cfg = load_settings(None)
        self.assertEqual(cfg.source, "synthetic")
        self.assertEqual(cfg.alpha_grid, DEFAULT_ALPHA_GRID)
        self.assertEqual(cfg.seeds, DEFAULT_SEEDS)
        self.assertEqual(cfg.networks.time_kernel, 1)

    def test_environment_overrides_yaml(self):
        with mock.patch.dict(os.environ, {"WEBLYNET_SEEDS": "7,8,9", "WEBLYNET_WORKERS": "4"}):
            cfg = load_settings(self._write(CONFIG))
        self.assertEqual(cfg.seeds, (7, 8, 9))
        self.assertEqual(cfg.workers, 4)

    def test_blank_environment_value_is_ignored(self):
        with mock.patch.dict(os.environ, {"WEBLYNET_SEEDS": "  "}):
            cfg = load_settings(self._write(CONFIG))
        self.assertEqual(cfg.seeds, (3, 4))

    def test_manifest_paths_resolve_against_the_config(self):
        cfg = load_settings(
            self._write(
                "data:\n  source: manifest\n  manifests:\n"
                "    train: web/manifest.jsonl\n    test: eval/manifest.jsonl\n    pretrain: /abs/pre.jsonl\n"
            )
        )
        self.assertEqual(cfg.manifests.train, self.root / "web" / "manifest.jsonl")
        self.assertEqual(cfg.manifests.pretrain, Path("/abs/pre.jsonl"))

    def test_invalid_settings_exit(self):
        bad = [
            "data:\n  source: s3\n",
            "data:\n  source: manifest\n",
            "data:\n  source: manifest\n  manifests:\n    train: a.jsonl\n    test: b.jsonl\n",
            "experiment:\n  alpha_grid: []\n",
            "experiment:\n  alpha_grid: [-1]\n",
            "experiment:\n  seeds: [1, 1]\n",
            "experiment:\n  seeds: [-1, 2]\n",
            "experiment:\n  validation_fraction: 1.0\n",
            "networks:\n  time_kernel: 5\n",
            "training:\n  batch_size: 0\n",
            "training:\n  n_epochs: many\n",
        ]
        for text in bad:
            with self.subTest(text=text), self.assertRaises(SystemExit):
                load_settings(self._write(text))


class FingerprintTests(unittest.TestCase):
    def setUp(self):
        self.cfg = load_settings(None)

    def test_scheduling_fields_do_not_change_the_fingerprint(self):
        moved = dataclasses.replace(
            self.cfg,
            seeds=(9,),
            alpha_grid=(0.0, 1.0),
            output_dir=Path("elsewhere"),
            ledger_db=Path("elsewhere/ledger.db"),
            workers=8,
        )
        self.assertEqual(config_fingerprint(moved), config_fingerprint(self.cfg))

    def test_training_fields_change_the_fingerprint(self):
        longer = dataclasses.replace(self.cfg, train=dataclasses.replace(self.cfg.train, n_epochs=7))
        wider = dataclasses.replace(self.cfg, networks=dataclasses.replace(self.cfg.networks, width_scale=0.5))
        self.assertNotEqual(config_fingerprint(longer), config_fingerprint(self.cfg))
        self.assertNotEqual(config_fingerprint(wider), config_fingerprint(self.cfg))
        self.assertEqual(len(config_fingerprint(self.cfg)), 64)


class UtilsTests(unittest.TestCase):
    def test_list_parsing(self):
        self.assertEqual(parse_float_list("0; 0.5,1"), (0.0, 0.5, 1.0))
        self.assertEqual(parse_float_list(2), (2.0,))
        self.assertEqual(parse_float_list(None), ())
        self.assertEqual(parse_int_list([1, 2.0]), (1, 2))

    def test_slug_and_alpha_format(self):
        self.assertEqual(slug("N1-Self + N2-Self (averaged)"), "n1-self-n2-self-averaged")
        self.assertEqual(slug("WeblyNet (alpha=0)"), "weblynet-alpha-0")
        self.assertEqual(slug("  "), "unnamed")
        self.assertEqual(format_alpha(0), "0.0")
        self.assertEqual(format_alpha(0.5), "0.5")


if __name__ == "__main__":
    unittest.main()
