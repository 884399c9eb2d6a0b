from __future__ import annotations

import asyncio
import logging
import os
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator

from core.cell_state_machine import (
    EVENT_FAIL,
    EVENT_START,
    EVENT_SUCCEED,
    STATE_COMPLETED,
    STATE_FAILED,
    STATE_PENDING,
    transition_state,
)
from core.contracts import RunRepository
from core.errors import StageError
from core.models import PREDICT_WHICH_AVERAGE, Dataset, ExperimentConfig, SeedOutcome
from infra.checkpoint import load_checkpoint, save_checkpoint
from infra.feature_io import write_manifest
from infra.report_writer import write_eval_report, write_experiment_reports
from infra.settings import config_fingerprint
from infra.state_store import RunLedger
from infra.utils import format_alpha, slug
from .data_service import build_view2, clean_twin, split_train_val
from .evaluation_service import SystemSummary, evaluate, summarize
from .experiment_service import (
    ROLE_N1,
    ROLE_N2,
    ROLE_PRETRAINED,
    SYSTEM_AVERAGED,
    SYSTEM_N1_CLEAN,
    SYSTEM_N1_CO,
    SYSTEM_N1_SELF,
    SYSTEM_N2_CO,
    SYSTEM_N2_RAW,
    SYSTEM_N2_SELF,
    SYSTEM_PRETRAINED,
    SYSTEM_WEBLYNET,
    SYSTEM_WEBLYNET_ALPHA0,
    PlanEntry,
    SeedPlan,
    SweepEntry,
    evaluate_plan,
    load_splits,
    pretrain_n1,
    select_alpha,
    train_joint,
    train_self,
    view2_dim_of,
    write_plan,
)
from .training_service import TrainedSystem, TrainingResult

LOG = logging.getLogger("weblynet")

CHECKPOINT_FILE = "checkpoint.pb"
EPOCH_LOG_FILE = "epochs.jsonl"


@contextmanager
def stage(name: str) -> Iterator[None]:
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        LOG.error("stage %s failed: %s", name, exc)
        raise StageError(name, str(exc)) from exc


@dataclass(frozen=True)
class PipelineResult:
    summaries: list[SystemSummary]
    outcomes: list[SeedOutcome]
    report_files: list[Path]


@dataclass(frozen=True)
class Cell:
    key: str
    system: str
    run: Callable[[Path], TrainingResult]
    alpha: float | None = None


class ExperimentOrchestrator:
    def __init__(self, *, config: ExperimentConfig, ledger: RunRepository):
        self.config = config
        self.ledger = ledger
        self._slots = asyncio.Semaphore(max(1, int(config.workers)))
        self.fingerprint = config_fingerprint(config)

    def seed_dir(self, seed: int) -> Path:
        return self.config.output_dir / f"seed-{seed}"

    def _cell_dir(self, seed: int, key: str) -> Path:
        return self.seed_dir(seed) / "cells" / key

    def _rel(self, seed: int, path: Path) -> str:
        return os.path.relpath(path, self.seed_dir(seed))

    async def run(self) -> PipelineResult:
        await self.ledger.init()
        outcomes = [await self.run_seed(seed) for seed in self.config.seeds]
        summaries = summarize({o.seed: list(o.reports) for o in outcomes})
        with stage("report"):
            files = write_experiment_reports(self.config.output_dir, summaries, outcomes)
        for s in summaries:
            LOG.info("system=%s map=%.4f±%.4f seeds=%s", s.system_name, s.mean, s.std, len(s.maps))
        LOG.info(
            "ledger: %s completed, %s failed cells",
            await self.ledger.count_cells({STATE_COMPLETED}),
            await self.ledger.count_cells({STATE_FAILED}),
        )
        return PipelineResult(summaries=summaries, outcomes=outcomes, report_files=files)

    async def _run_cell(self, seed: int, cell: Cell) -> TrainedSystem:
        cell_id = f"seed-{seed}/{cell.key}"
        cell_dir = self._cell_dir(seed, cell.key)
        checkpoint = cell_dir / CHECKPOINT_FILE
        record = await self.ledger.get_cell(cell_id)
        state = record.state if record else STATE_PENDING
        if state == STATE_COMPLETED:
            if record.fingerprint != self.fingerprint:
                LOG.warning("cell=%s was trained under different settings; retraining", cell_id)
            elif checkpoint.exists():
                LOG.info("cell=%s resumed from %s", cell_id, checkpoint)
                return load_checkpoint(checkpoint)
            else:
                LOG.warning("cell=%s marked completed but %s is missing; retraining", cell_id, checkpoint)
            state = STATE_PENDING

        state = transition_state(state, EVENT_START)
        await self.ledger.upsert_cell(
            cell_id=cell_id,
            seed=seed,
            system=cell.system,
            alpha=cell.alpha,
            state=state,
            fingerprint=self.fingerprint,
        )
        try:
            async with self._slots:
                LOG.info("cell=%s system=%s started", cell_id, cell.system)
                result = await asyncio.to_thread(cell.run, cell_dir / EPOCH_LOG_FILE)
            save_checkpoint(checkpoint, result.system)
        except Exception as exc:
            await self.ledger.upsert_cell(
                cell_id=cell_id,
                seed=seed,
                system=cell.system,
                alpha=cell.alpha,
                state=transition_state(state, EVENT_FAIL),
                last_error=str(exc),
                fingerprint=self.fingerprint,
            )
            LOG.error("cell=%s failed: %s", cell_id, exc)
            raise StageError(cell.key, str(exc)) from exc

        await self.ledger.upsert_cell(
            cell_id=cell_id,
            seed=seed,
            system=cell.system,
            alpha=cell.alpha,
            state=transition_state(state, EVENT_SUCCEED),
            checkpoint_path=str(checkpoint),
            fingerprint=self.fingerprint,
        )
        LOG.info("cell=%s completed", cell_id)
        return result.system

    def _write_data(self, seed: int, splits: dict[str, Dataset]) -> dict[str, str]:
        if self.config.source != "synthetic":
            manifests = self.config.manifests
            assert manifests is not None
            return {"train": str(manifests.train), "test": str(manifests.test)}
        data_dir = self.seed_dir(seed) / "data"
        paths = {}
        for name, ds in splits.items():
            paths[name] = self._rel(seed, write_manifest(ds, data_dir / name / "manifest.jsonl"))
        return paths

    async def run_seed(self, seed: int) -> SeedOutcome:
        cfg = self.config
        LOG.info("seed=%s started", seed)
        with stage("data"):
            splits = load_splits(cfg, seed)
            manifest_paths = self._write_data(seed, splits)

        pretrained = await self._run_cell(
            seed,
            Cell(
                "pretrain",
                SYSTEM_PRETRAINED,
                lambda log: pretrain_n1(cfg, splits["pretrain"], seed, epoch_log_path=log),
            ),
        )

        with stage("view2"):
            full_train = build_view2(pretrained.network(ROLE_PRETRAINED), splits["train"])
            train, val = split_train_val(full_train, cfg.validation_fraction, seed)
            val = val if len(val) else train
            if val is train:
                LOG.warning("seed=%s: empty validation split, selecting alpha on training data", seed)
            dim = view2_dim_of(pretrained)

        def self_cell(key: str, system: str, data: Dataset, role: str, **kwargs) -> Cell:
            return Cell(
                key,
                system,
                lambda log: train_self(cfg, data, seed, role=role, system_name=system, epoch_log_path=log, **kwargs),
            )

        self_cells = [
            self_cell("n1-self", SYSTEM_N1_SELF, train, ROLE_N1),
            self_cell("n2-self", SYSTEM_N2_SELF, train, ROLE_N2, view2_dim=dim),
            self_cell("n2-self-raw", SYSTEM_N2_RAW, train, ROLE_N2, input_view="view1_mean"),
        ]
        if train.has_true_labels:
            self_cells.append(self_cell("n1-self-clean", SYSTEM_N1_CLEAN, clean_twin(train), ROLE_N1))

        def joint_cell(alpha: float) -> Cell:
            return Cell(
                f"joint-alpha-{format_alpha(alpha)}",
                SYSTEM_WEBLYNET,
                lambda log: train_joint(cfg, train, seed, alpha=alpha, view2_dim=dim, epoch_log_path=log),
                alpha=alpha,
            )

        joint_cells = [joint_cell(alpha) for alpha in cfg.alpha_grid]
        trained = await asyncio.gather(*(self._run_cell(seed, cell) for cell in [*self_cells, *joint_cells]))
        by_key = {cell.key: system for cell, system in zip([*self_cells, *joint_cells], trained)}

        with stage("select-alpha"):
            val_maps = []
            for cell in joint_cells:
                value = evaluate(by_key[cell.key], val, PREDICT_WHICH_AVERAGE).map
                await self.ledger.record_metrics(f"seed-{seed}/{cell.key}", val_map=value)
                val_maps.append((float(cell.alpha), value))
                LOG.info("seed=%s alpha=%s val_map=%.6f", seed, format_alpha(cell.alpha), value)
            chosen = select_alpha(val_maps)
            LOG.info("seed=%s selected alpha=%s", seed, format_alpha(chosen))

        with stage("evaluate"):
            averaged = TrainedSystem.ensemble(SYSTEM_AVERAGED, [by_key["n1-self"], by_key["n2-self"]])
            averaged_path = save_checkpoint(self._cell_dir(seed, "averaged") / CHECKPOINT_FILE, averaged)
            ckpt = {
                cell.key: self._rel(seed, self._cell_dir(seed, cell.key) / CHECKPOINT_FILE)
                for cell in [*self_cells, *joint_cells]
            }
            chosen_key = joint_cell(chosen).key
            systems = [
                PlanEntry(SYSTEM_N1_SELF, ckpt["n1-self"], ROLE_N1),
                PlanEntry(SYSTEM_N2_SELF, ckpt["n2-self"], ROLE_N2),
                PlanEntry(SYSTEM_N2_RAW, ckpt["n2-self-raw"], ROLE_N2),
            ]
            if "n1-self-clean" in ckpt:
                systems.append(PlanEntry(SYSTEM_N1_CLEAN, ckpt["n1-self-clean"], ROLE_N1))
            systems.extend(
                [
                    PlanEntry(SYSTEM_AVERAGED, self._rel(seed, averaged_path), PREDICT_WHICH_AVERAGE),
                    PlanEntry(SYSTEM_N1_CO, ckpt[chosen_key], ROLE_N1),
                    PlanEntry(SYSTEM_N2_CO, ckpt[chosen_key], ROLE_N2),
                    PlanEntry(SYSTEM_WEBLYNET, ckpt[chosen_key], PREDICT_WHICH_AVERAGE),
                ]
            )
            if 0.0 in cfg.alpha_grid:
                alpha0 = ckpt[joint_cell(0.0).key]
                systems.append(PlanEntry(SYSTEM_WEBLYNET_ALPHA0, alpha0, PREDICT_WHICH_AVERAGE))

            plan = SeedPlan(
                seed=seed,
                test_manifest=manifest_paths["test"],
                train_manifest=manifest_paths["train"],
                pretrained_checkpoint=self._rel(seed, self._cell_dir(seed, "pretrain") / CHECKPOINT_FILE),
                systems=tuple(systems),
                sweep=tuple(
                    SweepEntry(alpha=alpha, val_map=value, checkpoint=ckpt[joint_cell(alpha).key])
                    for alpha, value in val_maps
                ),
                selected_alpha=chosen,
                class_names=tuple(splits["test"].class_names),
            )
            write_plan(self.seed_dir(seed), plan)
            outcome = evaluate_plan(self.seed_dir(seed), plan)
            for report in outcome.reports:
                write_eval_report(self.seed_dir(seed) / "eval" / f"{slug(report.system_name)}.csv", report)
            for row in outcome.sweep:
                await self.ledger.record_metrics(f"seed-{seed}/{joint_cell(row.alpha).key}", test_map=row.test_map)
            by_name = {report.system_name: report for report in outcome.reports}
            for cell in self_cells:
                if cell.system in by_name:
                    await self.ledger.record_metrics(f"seed-{seed}/{cell.key}", test_map=by_name[cell.system].map)

        maps = ", ".join(f"{r.system_name}={r.map:.4f}" for r in outcome.reports)
        LOG.info("seed=%s finished: %s", seed, maps)
        return outcome


async def run_pipeline(cfg: ExperimentConfig) -> PipelineResult:
    ledger = RunLedger(cfg.ledger_db)
    try:
        return await ExperimentOrchestrator(config=cfg, ledger=ledger).run()
    finally:
        await ledger.close()
