from __future__ import annotations

import dataclasses
import tempfile
import unittest
from pathlib import Path

from helpers import bootstrap_tests, tiny_config

bootstrap_tests()

from core.cell_state_machine import STATE_COMPLETED  # noqa: E402
from core.errors import StageError  # noqa: E402
from core.models import ManifestSourceConfig  # noqa: E402
from infra.report_writer import NOISE_CSV, PER_CLASS_CSV, SUMMARY_CSV, SUMMARY_MD, SWEEP_CSV  # noqa: E402
from infra.state_store import RunLedger  # noqa: E402
from services.experiment_service import (  # noqa: E402
    PLAN_FILE,
    SYSTEM_AVERAGED,
    SYSTEM_N1_CLEAN,
    SYSTEM_N1_SELF,
    SYSTEM_WEBLYNET,
    SYSTEM_WEBLYNET_ALPHA0,
    evaluate_plan,
    read_plan,
    select_alpha,
)
from services.orchestrator import ExperimentOrchestrator, run_pipeline  # noqa: E402

REPORT_FILES = (SUMMARY_CSV, PER_CLASS_CSV, SWEEP_CSV, NOISE_CSV, SUMMARY_MD)


def _maps(outcome) -> dict[str, float]:
    return {report.system_name: report.map for report in outcome.reports}


class PipelineTests(unittest.IsolatedAsyncioTestCase):
    async def asyncSetUp(self):
        self.tmpdir = tempfile.TemporaryDirectory()
        self.root = Path(self.tmpdir.name)

    async def asyncTearDown(self):
        self.tmpdir.cleanup()

    async def test_full_run_writes_every_artifact(self):
        cfg = tiny_config(self.root / "run")
        result = await run_pipeline(cfg)

        for name in REPORT_FILES:
            self.assertTrue((cfg.output_dir / name).exists(), name)
        seed_dir = cfg.output_dir / "seed-0"
        plan = read_plan(seed_dir)
        self.assertIn(plan.selected_alpha, cfg.alpha_grid)
        self.assertEqual([entry.alpha for entry in plan.sweep], list(cfg.alpha_grid))
        names = [entry.system for entry in plan.systems]
        for system in (SYSTEM_N1_SELF, SYSTEM_N1_CLEAN, SYSTEM_AVERAGED, SYSTEM_WEBLYNET, SYSTEM_WEBLYNET_ALPHA0):
            self.assertIn(system, names)
        self.assertEqual(len(list((seed_dir / "eval").glob("*.csv"))), len(names))
        self.assertTrue((seed_dir / "cells" / "pretrain" / "epochs.jsonl").exists())

        outcome = result.outcomes[0]
        self.assertEqual(outcome.selected_alpha, select_alpha([(row.alpha, row.val_map) for row in outcome.sweep]))
        self.assertTrue(outcome.noise.available)
        self.assertEqual([s.system_name for s in result.summaries], [r.system_name for r in outcome.reports])

        ledger = RunLedger(cfg.ledger_db)
        try:
            cells = await ledger.list_seed_cells(0)
            self.assertEqual(len(cells), 1 + 4 + len(cfg.alpha_grid))
            self.assertTrue(all(cell.state == STATE_COMPLETED for cell in cells))
            joint = [cell for cell in cells if cell.alpha is not None]
            self.assertTrue(all(cell.val_map is not None and cell.test_map is not None for cell in joint))
        finally:
            await ledger.close()

    async def test_zero_alpha_matches_the_averaged_baseline(self):
        cfg = tiny_config(self.root / "run", alpha_grid=(0.0,))
        result = await run_pipeline(cfg)
        maps = _maps(result.outcomes[0])
        self.assertAlmostEqual(maps[SYSTEM_WEBLYNET], maps[SYSTEM_AVERAGED], delta=1e-6)
        self.assertAlmostEqual(maps[SYSTEM_WEBLYNET_ALPHA0], maps[SYSTEM_AVERAGED], delta=1e-6)

    async def test_repeat_runs_are_byte_identical(self):
        first = tiny_config(self.root / "a")
        second = tiny_config(self.root / "b")
        await run_pipeline(first)
        await run_pipeline(second)
        for name in (*REPORT_FILES, f"seed-0/{PLAN_FILE}", "seed-0/cells/joint-alpha-1.0/checkpoint.pb"):
            self.assertEqual((first.output_dir / name).read_bytes(), (second.output_dir / name).read_bytes(), name)

    async def test_rerun_resumes_completed_cells(self):
        cfg = tiny_config(self.root / "run")
        first = await run_pipeline(cfg)
        checkpoint = cfg.output_dir / "seed-0" / "cells" / "n1-self" / "checkpoint.pb"
        stamp = checkpoint.stat().st_mtime_ns
        with self.assertLogs("weblynet", level="INFO") as logs:
            second = await run_pipeline(cfg)
        self.assertEqual(checkpoint.stat().st_mtime_ns, stamp)
        self.assertTrue(any("resumed from" in line for line in logs.output))
        self.assertEqual(_maps(first.outcomes[0]), _maps(second.outcomes[0]))

    async def test_changed_training_settings_retrain_completed_cells(self):
        cfg = tiny_config(self.root / "run")
        await run_pipeline(cfg)
        checkpoint = cfg.output_dir / "seed-0" / "cells" / "n1-self" / "checkpoint.pb"
        before = checkpoint.read_bytes()
        longer = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, n_epochs=cfg.train.n_epochs + 1))
        with self.assertLogs("weblynet", level="INFO") as logs:
            await run_pipeline(longer)
        self.assertTrue(any("trained under different settings" in line for line in logs.output))
        self.assertFalse(any("resumed from" in line for line in logs.output))
        self.assertNotEqual(checkpoint.read_bytes(), before)

    async def test_scheduling_settings_keep_completed_cells(self):
        cfg = tiny_config(self.root / "run", alpha_grid=(0.0,))
        await run_pipeline(cfg)
        wider = dataclasses.replace(cfg, alpha_grid=(0.0, 1.0), workers=2)
        with self.assertLogs("weblynet", level="INFO") as logs:
            await run_pipeline(wider)
        self.assertTrue(any("cell=seed-0/n1-self resumed from" in line for line in logs.output))
        self.assertTrue(any("cell=seed-0/joint-alpha-1.0 system=WeblyNet started" in line for line in logs.output))

    async def test_report_is_recomputed_from_disk(self):
        cfg = tiny_config(self.root / "run")
        result = await run_pipeline(cfg)
        rebuilt = evaluate_plan(cfg.output_dir / "seed-0")
        self.assertEqual(_maps(rebuilt), _maps(result.outcomes[0]))
        self.assertEqual([row.test_map for row in rebuilt.sweep], [row.test_map for row in result.outcomes[0].sweep])

    async def test_missing_manifests_fail_the_data_stage(self):
        missing = ManifestSourceConfig(
            train=self.root / "none" / "train.jsonl",
            test=self.root / "none" / "test.jsonl",
            pretrain=self.root / "none" / "pretrain.jsonl",
        )
        cfg = dataclasses.replace(tiny_config(self.root / "run"), source="manifest", manifests=missing)
        ledger = RunLedger(cfg.ledger_db)
        try:
            with self.assertRaises(StageError) as ctx:
                await ExperimentOrchestrator(config=cfg, ledger=ledger).run()
        finally:
            await ledger.close()
        self.assertEqual(ctx.exception.stage, "data")


if __name__ == "__main__":
    unittest.main()
