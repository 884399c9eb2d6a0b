from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from pathlib import Path
from typing import Any

import yaml

from core.errors import ContractError
from core.models import (
    ExperimentConfig,
    ManifestSourceConfig,
    NetworkOverrides,
    SyntheticDataConfig,
    SyntheticOptions,
    TrainConfig,
)
from .utils import parse_float_list, parse_int_list

SOURCE_SYNTHETIC = "synthetic"
SOURCE_MANIFEST = "manifest"

DEFAULT_ALPHA_GRID = (0.0, 0.1, 0.5, 1.0, 2.0, 5.0)
DEFAULT_SEEDS = (0, 1, 2, 3, 4)
DEFAULT_VALIDATION_FRACTION = 0.1
DEFAULT_PRETRAIN_EPOCHS = 10
DEFAULT_OUTPUT_DIR = "runs/weblynet"
LEDGER_FILE = "ledger.db"
# Fields that schedule cells without changing what any single cell trains.
RUN_ONLY_FIELDS = ("seeds", "alpha_grid", "output_dir", "ledger_db", "workers")


def env_or(name: str, default: Any) -> Any:
    value = os.getenv(name)
    return value if (value is not None and str(value).strip() != "") else default


def _resolve(base: Path, raw: Any) -> Path:
    if raw is None or not str(raw).strip():
        return Path()
    path = Path(str(raw)).expanduser()
    return path if path.is_absolute() else base / path


def _synthetic(raw: dict) -> SyntheticDataConfig:
    defaults = SyntheticDataConfig()
    base_options = SyntheticOptions()
    options = SyntheticOptions(
        **{
            f.name: type(getattr(base_options, f.name))(raw.get(f.name, getattr(base_options, f.name)))
            for f in dataclasses.fields(SyntheticOptions)
        }
    )
    return SyntheticDataConfig(
        num_classes=int(raw.get("num_classes", defaults.num_classes)),
        n_train=int(raw.get("n_train", defaults.n_train)),
        n_test=int(raw.get("n_test", defaults.n_test)),
        n_pretrain=int(raw.get("n_pretrain", defaults.n_pretrain)),
        pretrain_classes=int(raw.get("pretrain_classes", defaults.pretrain_classes)),
        noisy_class_fraction=float(raw.get("noisy_class_fraction", defaults.noisy_class_fraction)),
        fp_rate_low=float(raw.get("fp_rate_low", defaults.fp_rate_low)),
        fp_rate_high=float(raw.get("fp_rate_high", defaults.fp_rate_high)),
        options=options,
    )


def _manifests(raw: dict, base: Path) -> ManifestSourceConfig | None:
    if not raw:
        return None
    return ManifestSourceConfig(
        train=_resolve(base, raw.get("train", "")),
        test=_resolve(base, raw.get("test", "")),
        pretrain=_resolve(base, raw.get("pretrain", "")),
        class_names=tuple(str(x) for x in (raw.get("class_names", []) or [])),
        pretrain_class_names=tuple(str(x) for x in (raw.get("pretrain_class_names", []) or [])),
    )


def _networks(raw: dict) -> NetworkOverrides:
    defaults = NetworkOverrides()
    return NetworkOverrides(
        width_scale=float(raw.get("width_scale", defaults.width_scale)),
        block_filters=tuple(int(x) for x in raw.get("block_filters", defaults.block_filters)),
        f1_filters=int(raw.get("f1_filters", defaults.f1_filters)),
        f2_filters=int(raw.get("f2_filters", defaults.f2_filters)),
        n2_hidden=tuple(int(x) for x in raw.get("n2_hidden", defaults.n2_hidden)),
        dropout_p=float(raw.get("dropout_p", defaults.dropout_p)),
        time_kernel=int(raw.get("time_kernel", defaults.time_kernel)),
    )


def settings_problems(cfg: ExperimentConfig) -> list[str]:
    problems: list[str] = []
    if cfg.source not in (SOURCE_SYNTHETIC, SOURCE_MANIFEST):
        problems.append(f"data.source must be {SOURCE_SYNTHETIC} or {SOURCE_MANIFEST}, got {cfg.source!r}")
    if cfg.source == SOURCE_MANIFEST:
        if cfg.manifests is None:
            problems.append("data.manifests is required when data.source is manifest")
        else:
            for name in ("train", "test", "pretrain"):
                if not getattr(cfg.manifests, name).name:
                    problems.append(f"data.manifests.{name} is required")
    if not cfg.alpha_grid:
        problems.append("experiment.alpha_grid must not be empty")
    if any(a < 0 for a in cfg.alpha_grid):
        problems.append(f"experiment.alpha_grid values must be >= 0, got {list(cfg.alpha_grid)}")
    if not cfg.seeds:
        problems.append("experiment.seeds must not be empty")
    if len(set(cfg.seeds)) != len(cfg.seeds):
        problems.append(f"experiment.seeds must be unique, got {list(cfg.seeds)}")
    if any(s < 0 for s in cfg.seeds):
        problems.append(f"experiment.seeds must be >= 0, got {list(cfg.seeds)}")
    if not 0.0 <= cfg.validation_fraction < 1.0:
        problems.append(f"experiment.validation_fraction must lie in [0, 1), got {cfg.validation_fraction}")
    if cfg.workers < 1:
        problems.append(f"experiment.workers must be >= 1, got {cfg.workers}")
    if cfg.pretrain_epochs < 0:
        problems.append(f"training.pretrain_epochs must be >= 0, got {cfg.pretrain_epochs}")
    if cfg.networks.width_scale <= 0:
        problems.append(f"networks.width_scale must be positive, got {cfg.networks.width_scale}")
    if cfg.networks.time_kernel not in (1, 3):
        problems.append(f"networks.time_kernel must be 1 or 3, got {cfg.networks.time_kernel}")
    if not 0.0 <= cfg.networks.dropout_p < 1.0:
        problems.append(f"networks.dropout_p must lie in [0, 1), got {cfg.networks.dropout_p}")
    return problems


def config_fingerprint(cfg: ExperimentConfig) -> str:
    payload = dataclasses.asdict(cfg)
    for name in RUN_ONLY_FIELDS:
        payload.pop(name, None)
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def validate_settings(cfg: ExperimentConfig) -> ExperimentConfig:
    problems = settings_problems(cfg)
    if problems:
        raise SystemExit(f"Invalid settings: {'; '.join(problems)}")
    return cfg


def load_settings(config_path: Path | None = None) -> ExperimentConfig:
    """Build an ExperimentConfig from YAML, then apply WEBLYNET_* environment overrides."""
    raw: dict = {}
    base = Path.cwd()
    if config_path is not None:
        raw = yaml.safe_load(Path(config_path).read_text(encoding="utf-8")) or {}
        base = Path(config_path).resolve().parent

    data_raw = raw.get("data", {}) or {}
    training_raw = raw.get("training", {}) or {}
    experiment_raw = raw.get("experiment", {}) or {}

    try:
        train = TrainConfig(
            n_epochs=int(training_raw.get("n_epochs", TrainConfig.n_epochs)),
            batch_size=int(training_raw.get("batch_size", TrainConfig.batch_size)),
            learning_rates=parse_float_list(training_raw.get("learning_rates", TrainConfig.learning_rates)),
            divergence=str(training_raw.get("divergence", TrainConfig.divergence)),
        )
        synthetic = _synthetic(data_raw.get("synthetic", {}) or {})
        networks = _networks(raw.get("networks", {}) or {})
    except (ContractError, TypeError, ValueError) as exc:
        raise SystemExit(f"Invalid settings: {exc}") from exc

    output_dir = _resolve(base, env_or("WEBLYNET_OUTPUT_DIR", experiment_raw.get("output_dir", DEFAULT_OUTPUT_DIR)))
    ledger_raw = env_or("WEBLYNET_LEDGER_DB", experiment_raw.get("ledger_db", ""))
    seeds_raw = env_or("WEBLYNET_SEEDS", experiment_raw.get("seeds", DEFAULT_SEEDS))

    cfg = ExperimentConfig(
        source=str(data_raw.get("source", SOURCE_SYNTHETIC)),
        synthetic=synthetic,
        manifests=_manifests(data_raw.get("manifests", {}) or {}, base),
        networks=networks,
        train=train,
        pretrain_epochs=int(training_raw.get("pretrain_epochs", DEFAULT_PRETRAIN_EPOCHS)),
        alpha_grid=parse_float_list(experiment_raw.get("alpha_grid", DEFAULT_ALPHA_GRID)),
        seeds=parse_int_list(seeds_raw),
        validation_fraction=float(experiment_raw.get("validation_fraction", DEFAULT_VALIDATION_FRACTION)),
        output_dir=output_dir,
        ledger_db=_resolve(base, ledger_raw) if str(ledger_raw).strip() else output_dir / LEDGER_FILE,
        workers=int(env_or("WEBLYNET_WORKERS", experiment_raw.get("workers", 1))),
    )
    return validate_settings(cfg)
