#!/usr/bin/env python3
from __future__ import annotations

import argparse
import asyncio
import dataclasses
import logging
import os
from pathlib import Path

from core.errors import (
    CheckpointError,
    ContractError,
    DataError,
    DimensionError,
    IngestionError,
    SchemaError,
    StageError,
    UndefinedMetricError,
)
from core.models import PREDICT_WHICH_AVERAGE, Dataset, ExperimentConfig, SeedOutcome, SweepRow
from infra.checkpoint import load_checkpoint, save_checkpoint
from infra.feature_io import attach_view2, load_manifest, write_manifest, write_view2_file
from infra.report_writer import (
    NOISE_CSV,
    SWEEP_CSV,
    render_noise_report,
    write_eval_report,
    write_experiment_reports,
    write_noise_csv,
    write_sweep_csv,
)
from infra.settings import load_settings, validate_settings
from infra.utils import format_alpha, parse_float_list, parse_int_list
from services.data_service import build_view2, split_train_val, synthetic_splits
from services.evaluation_service import evaluate, summarize
from services.experiment_service import (
    PLAN_FILE,
    ROLE_N1,
    ROLE_N2,
    ROLE_PRETRAINED,
    SYSTEM_N1_SELF,
    SYSTEM_N2_RAW,
    SYSTEM_N2_SELF,
    evaluate_plan,
    pretrain_n1,
    select_alpha,
    train_joint,
    train_self,
)
from services.noise_service import analyze_noise
from services.optim import LEARNING_RATE_GRID
from services.orchestrator import CHECKPOINT_FILE, EPOCH_LOG_FILE, run_pipeline

LOG = logging.getLogger("weblynet")

USER_ERRORS = (
    CheckpointError,
    ContractError,
    DataError,
    DimensionError,
    IngestionError,
    SchemaError,
    StageError,
    UndefinedMetricError,
)

SELF_NETWORKS = {
    "n1": (ROLE_N1, "view2", SYSTEM_N1_SELF),
    "n2": (ROLE_N2, "view2", SYSTEM_N2_SELF),
    "n2-raw": (ROLE_N2, "view1_mean", SYSTEM_N2_RAW),
}


def apply_overrides(cfg: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    train_changes = {}
    if getattr(args, "epochs", None) is not None:
        train_changes["n_epochs"] = int(args.epochs)
    if getattr(args, "batch_size", None) is not None:
        train_changes["batch_size"] = int(args.batch_size)
    if getattr(args, "lr", None) is not None:
        train_changes["learning_rates"] = parse_float_list(args.lr)
    changes: dict = {}
    if train_changes:
        changes["train"] = dataclasses.replace(cfg.train, **train_changes)
    if getattr(args, "pretrain_epochs", None) is not None:
        changes["pretrain_epochs"] = int(args.pretrain_epochs)
    if getattr(args, "alphas", None):
        changes["alpha_grid"] = parse_float_list(args.alphas)
    if getattr(args, "seeds", None):
        changes["seeds"] = parse_int_list(args.seeds)
    if getattr(args, "output_dir", None):
        changes["output_dir"] = Path(args.output_dir)
        if not os.getenv("WEBLYNET_LEDGER_DB"):
            changes["ledger_db"] = Path(args.output_dir) / cfg.ledger_db.name
    if getattr(args, "workers", None) is not None:
        changes["workers"] = int(args.workers)
    if getattr(args, "width_scale", None) is not None:
        changes["networks"] = dataclasses.replace(cfg.networks, width_scale=float(args.width_scale))
    return validate_settings(dataclasses.replace(cfg, **changes)) if changes else cfg


def _seed(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    return int(args.seed) if getattr(args, "seed", None) is not None else int(cfg.seeds[0])


def _with_view2(ds: Dataset, args: argparse.Namespace) -> Dataset:
    if getattr(args, "view2", None):
        return attach_view2(ds, Path(args.view2))
    if getattr(args, "pretrained", None):
        pretrained = load_checkpoint(Path(args.pretrained))
        return build_view2(pretrained.network(ROLE_PRETRAINED), ds)
    return ds


def _view2_dim(ds: Dataset) -> int | None:
    for rec in ds.recordings:
        if rec.view2 is not None:
            return int(rec.view2.shape[0])
    return None


def _require_view2_dim(ds: Dataset) -> int:
    dim = _view2_dim(ds)
    if dim is None:
        raise DataError("this command needs view 2: pass --view2 FILE or --pretrained CHECKPOINT")
    return dim


# --- subcommands ----------------------------------------------------------------


def cmd_generate(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    seed = _seed(cfg, args)
    out = Path(args.out) if args.out else cfg.output_dir / "data"
    for name, ds in synthetic_splits(cfg.synthetic, seed).items():
        write_manifest(ds, out / name / "manifest.jsonl")
    print(f"wrote pretrain/train/test manifests under {out}")
    return 0


def cmd_pretrain(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    ds = load_manifest(Path(args.manifest), split="pretrain")
    out = Path(args.out)
    result = pretrain_n1(cfg, ds, _seed(cfg, args), epoch_log_path=out.parent / EPOCH_LOG_FILE)
    save_checkpoint(out, result.system)
    return 0


def cmd_view2(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    pretrained = load_checkpoint(Path(args.pretrained))
    ds = build_view2(pretrained.network(ROLE_PRETRAINED), load_manifest(Path(args.manifest)))
    write_view2_file(Path(args.out), ds)
    print(f"wrote view 2 for {len(ds)} recordings to {args.out}")
    return 0


def cmd_train(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    seed = _seed(cfg, args)
    ds = _with_view2(load_manifest(Path(args.manifest), split="train"), args)
    out = Path(args.out)
    if args.mode == "self":
        role, input_view, name = SELF_NETWORKS[args.network]
        view2_dim = _view2_dim(ds) if input_view == "view2" and role == ROLE_N2 else None
        result = train_self(
            cfg,
            ds,
            seed,
            role=role,
            system_name=name,
            view2_dim=view2_dim,
            input_view=input_view,
            epoch_log_path=out / EPOCH_LOG_FILE,
        )
    else:
        alpha = float(args.alpha) if args.alpha is not None else float(cfg.alpha_grid[0])
        result = train_joint(
            cfg, ds, seed, alpha=alpha, view2_dim=_require_view2_dim(ds), epoch_log_path=out / EPOCH_LOG_FILE
        )
    save_checkpoint(out / CHECKPOINT_FILE, result.system)
    return 0


def cmd_eval(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    system = load_checkpoint(Path(args.checkpoint))
    test = _with_view2(load_manifest(Path(args.manifest), split="test"), args)
    report = evaluate(system, test, args.which)
    if args.out:
        write_eval_report(Path(args.out), report)
    print(f"{report.system_name} which={args.which} MAP={report.map:.6f} n_test={report.n_test}")
    return 0


def cmd_sweep(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    seed = _seed(cfg, args)
    full = _with_view2(load_manifest(Path(args.manifest), split="train"), args)
    dim = _require_view2_dim(full)
    train, val = split_train_val(full, cfg.validation_fraction, seed)
    val = val if len(val) else train
    test = _with_view2(load_manifest(Path(args.test), split="test"), args) if args.test else None
    out = Path(args.out)

    results = []
    for alpha in cfg.alpha_grid:
        cell_dir = out / f"alpha-{format_alpha(alpha)}"
        log_path = cell_dir / EPOCH_LOG_FILE
        system = train_joint(cfg, train, seed, alpha=alpha, view2_dim=dim, epoch_log_path=log_path).system
        save_checkpoint(cell_dir / CHECKPOINT_FILE, system)
        val_map = evaluate(system, val, PREDICT_WHICH_AVERAGE).map
        test_map = evaluate(system, test, PREDICT_WHICH_AVERAGE).map if test is not None else float("nan")
        results.append((alpha, val_map, test_map, system))
    chosen = select_alpha([(alpha, val_map) for alpha, val_map, _, _ in results])
    rows = tuple(
        SweepRow(seed=seed, alpha=alpha, val_map=val_map, test_map=test_map, selected=alpha == chosen)
        for alpha, val_map, test_map, _ in results
    )
    write_sweep_csv(out / SWEEP_CSV, [SeedOutcome(seed=seed, reports=(), sweep=rows, selected_alpha=chosen)])
    best = next(system for alpha, _, _, system in results if alpha == chosen)
    save_checkpoint(out / CHECKPOINT_FILE, best)
    print(f"selected alpha={format_alpha(chosen)}")
    return 0


def cmd_analyze_noise(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    ds = load_manifest(Path(args.manifest))
    report = analyze_noise(ds, top=int(args.top))
    rendered = render_noise_report([(_seed(cfg, args), report)])
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "noise.md").write_text(rendered, encoding="utf-8")
        if report.available:
            write_noise_csv(out / NOISE_CSV, [(_seed(cfg, args), report)])
    print(rendered, end="")
    return 0


def cmd_report(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir) if args.run_dir else cfg.output_dir
    seed_dirs = sorted(
        (p for p in run_dir.glob("seed-*") if (p / PLAN_FILE).exists()),
        key=lambda p: int(p.name.split("-", 1)[1]),
    )
    if not seed_dirs:
        raise DataError(f"no seed directories with {PLAN_FILE} under {run_dir}")
    outcomes = [evaluate_plan(p) for p in seed_dirs]
    summaries = summarize({o.seed: list(o.reports) for o in outcomes})
    write_experiment_reports(run_dir, summaries, outcomes)
    for s in summaries:
        print(f"{s.system_name}: {100 * s.mean:.2f} ± {100 * s.std:.2f}")
    return 0


def cmd_run(cfg: ExperimentConfig, args: argparse.Namespace) -> int:
    result = asyncio.run(run_pipeline(cfg))
    for s in result.summaries:
        print(f"{s.system_name}: {100 * s.mean:.2f} ± {100 * s.std:.2f}")
    return 0


# --- parser -------------------------------------------------------------------


def _training_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", type=int)
    grid = ", ".join(f"{lr:g}" for lr in LEARNING_RATE_GRID)
    parser.add_argument("--lr", help=f"learning rate, or one per network, comma separated (grid: {grid})")
    parser.add_argument("--width-scale", type=float)


def _view2_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_mutually_exclusive_group()
    group.add_argument("--view2", help="view-2 feature file written by the view2 command")
    group.add_argument("--pretrained", help="pretrained N1 checkpoint to compute view 2 from")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Co-training of multi-label classifiers on webly labeled data")
    parser.add_argument("--config", default=os.getenv("WEBLYNET_CONFIG"))
    parser.add_argument("--log-level", default=os.getenv("LOG_LEVEL", "INFO"))
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic webly benchmark as manifests")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser("pretrain", help="train N1 on the clean pretraining split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--pretrain-epochs", type=int)
    _training_flags(p)
    p.set_defaults(handler=cmd_pretrain)

    p = sub.add_parser("view2", help="compute the transferred view from a pretrained N1")
    p.add_argument("--pretrained", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_view2)

    p = sub.add_parser("train", help="train one network alone or N1 and N2 jointly")
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", choices=("self", "joint"), default="joint")
    p.add_argument("--network", choices=sorted(SELF_NETWORKS), default="n1", help="network for --mode self")
    p.add_argument("--alpha", type=float)
    p.add_argument("--out", required=True, help="output directory")
    _training_flags(p)
    _view2_flags(p)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="per-class AP and MAP of a checkpoint on a test manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--which", choices=(ROLE_N1, ROLE_N2, PREDICT_WHICH_AVERAGE), default=PREDICT_WHICH_AVERAGE)
    p.add_argument("--out", help="CSV report path")
    _view2_flags(p)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("sweep", help="joint training over the alpha grid with validation selection")
    p.add_argument("--manifest", required=True)
    p.add_argument("--test", help="optional test manifest for the test MAP column")
    p.add_argument("--alphas", help="comma separated alpha grid")
    p.add_argument("--out", required=True)
    _training_flags(p)
    _view2_flags(p)
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("analyze-noise", help="per-class false-positive report")
    p.add_argument("--manifest", required=True)
    p.add_argument("--top", type=int, default=5)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(handler=cmd_analyze_noise)

    p = sub.add_parser("report", help="rebuild all tables from checkpoints and test manifests")
    p.add_argument("--run-dir")
    p.set_defaults(handler=cmd_report)

    p = sub.add_parser("run", help="full experiment: every seed, system and alpha")
    p.add_argument("--seeds", help="comma separated seeds")
    p.add_argument("--alphas", help="comma separated alpha grid")
    p.add_argument("--output-dir")
    p.add_argument("--workers", type=int)
    p.add_argument("--pretrain-epochs", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--width-scale", type=float)
    p.set_defaults(handler=cmd_run)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
    )
    cfg = apply_overrides(load_settings(Path(args.config) if args.config else None), args)
    try:
        return int(args.handler(cfg, args))
    except USER_ERRORS as exc:
        LOG.error("%s failed: %s", args.command, exc)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
