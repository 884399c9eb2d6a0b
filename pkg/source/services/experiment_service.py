from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import yaml

from core.errors import ContractError
from core.models import (
    PREDICT_WHICH_AVERAGE,
    Dataset,
    EvalReport,
    ExperimentConfig,
    N1Spec,
    N2Spec,
    NetworkOverrides,
    NoisyClassComparison,
    SeedOutcome,
    SweepRow,
    TrainConfig,
)
from core.networks import build_network
from infra.checkpoint import load_checkpoint
from infra.feature_io import load_manifest
from .data_service import build_view2, synthetic_splits
from .evaluation_service import evaluate
from .noise_service import analyze_noise
from .training_service import TrainedSystem, TrainingResult, train

LOG = logging.getLogger("weblynet")

ROLE_PRETRAINED = "pretrained"
ROLE_N1 = "n1"
ROLE_N2 = "n2"

SYSTEM_PRETRAINED = "N1-Pretrained"
SYSTEM_N1_SELF = "N1-Self"
SYSTEM_N2_SELF = "N2-Self"
SYSTEM_N2_RAW = "N2-Self (raw)"
SYSTEM_N1_CLEAN = "N1-Self (clean)"
SYSTEM_AVERAGED = "N1-Self + N2-Self (averaged)"
SYSTEM_N1_CO = "N1 (co-trained)"
SYSTEM_N2_CO = "N2 (co-trained)"
SYSTEM_WEBLYNET = "WeblyNet"
SYSTEM_WEBLYNET_ALPHA0 = "WeblyNet (alpha=0)"

PLAN_FILE = "systems.yaml"
TOP_NOISY_CLASSES = 5


# --- network specs ----------------------------------------------------------------


def n1_spec(overrides: NetworkOverrides, num_classes: int, embedding_dim: int) -> N1Spec:
    return N1Spec(
        num_classes=num_classes,
        block_filters=overrides.block_filters,
        f1_filters=overrides.f1_filters,
        f2_filters=overrides.f2_filters,
        f1_kernel_w=embedding_dim // 16,
        width_scale=overrides.width_scale,
        embedding_dim=embedding_dim,
        time_kernel=overrides.time_kernel,
    )


def n2_spec(overrides: NetworkOverrides, num_classes: int, input_dim: int, input_view: str = "view2") -> N2Spec:
    return N2Spec(
        num_classes=num_classes,
        input_dim=input_dim,
        hidden=overrides.n2_hidden,
        dropout_p=overrides.dropout_p,
        width_scale=overrides.width_scale,
        input_view=input_view,
    )


def embedding_dim_of(ds: Dataset) -> int:
    if not ds.recordings:
        raise ContractError(f"split {ds.split} is empty")
    return int(ds.recordings[0].view1.shape[1])


def view2_dim_of(pretrained: TrainedSystem) -> int:
    spec = pretrained.network(ROLE_PRETRAINED).spec
    assert isinstance(spec, N1Spec)
    return spec.scaled_f2


# --- data ----------------------------------------------------------------------


def load_splits(cfg: ExperimentConfig, seed: int) -> dict[str, Dataset]:
    if cfg.source == "synthetic":
        return synthetic_splits(cfg.synthetic, seed)
    manifests = cfg.manifests
    if manifests is None:
        raise ContractError("manifest source configured without manifest paths")
    return {
        "pretrain": load_manifest(manifests.pretrain, manifests.pretrain_class_names or None, split="pretrain"),
        "train": load_manifest(manifests.train, manifests.class_names or None, split="train"),
        "test": load_manifest(manifests.test, manifests.class_names or None, split="test"),
    }


# --- training stages -------------------------------------------------------------


def _train_config(cfg: ExperimentConfig, seed: int, **changes) -> TrainConfig:
    return dataclasses.replace(cfg.train, seed=int(seed), **changes)


def pretrain_n1(
    cfg: ExperimentConfig, pretrain: Dataset, seed: int, *, epoch_log_path: Path | None = None
) -> TrainingResult:
    spec = n1_spec(cfg.networks, pretrain.num_classes, embedding_dim_of(pretrain))
    net = build_network(spec, name=ROLE_PRETRAINED, seed=seed)
    train_cfg = _train_config(cfg, seed, n_epochs=cfg.pretrain_epochs, mode="self", alphas=())
    return train([net], pretrain, train_cfg, system_name=SYSTEM_PRETRAINED, epoch_log_path=epoch_log_path)


def train_self(
    cfg: ExperimentConfig,
    data: Dataset,
    seed: int,
    *,
    role: str,
    system_name: str,
    view2_dim: int | None = None,
    input_view: str = "view2",
    epoch_log_path: Path | None = None,
) -> TrainingResult:
    if role == ROLE_N1:
        spec = n1_spec(cfg.networks, data.num_classes, embedding_dim_of(data))
    elif role == ROLE_N2:
        if input_view == "view1_mean":
            input_dim = embedding_dim_of(data)
        elif view2_dim is None:
            raise ContractError("N2 on view2 needs the transferred feature width")
        else:
            input_dim = view2_dim
        spec = n2_spec(cfg.networks, data.num_classes, input_dim, input_view)
    else:
        raise ContractError(f"unknown network role: {role}")
    net = build_network(spec, name=role, seed=seed)
    train_cfg = _train_config(cfg, seed, mode="self", alphas=())
    return train([net], data, train_cfg, system_name=system_name, epoch_log_path=epoch_log_path)


def train_joint(
    cfg: ExperimentConfig,
    data: Dataset,
    seed: int,
    *,
    alpha: float,
    view2_dim: int,
    system_name: str = SYSTEM_WEBLYNET,
    epoch_log_path: Path | None = None,
) -> TrainingResult:
    networks = [
        build_network(n1_spec(cfg.networks, data.num_classes, embedding_dim_of(data)), name=ROLE_N1, seed=seed),
        build_network(n2_spec(cfg.networks, data.num_classes, view2_dim), name=ROLE_N2, seed=seed),
    ]
    train_cfg = _train_config(cfg, seed, mode="joint", alphas=(float(alpha),))
    return train(networks, data, train_cfg, system_name=system_name, epoch_log_path=epoch_log_path)


def select_alpha(val_maps: Sequence[tuple[float, float]]) -> float:
    """Highest validation MAP wins; ties keep the earlier grid value."""
    if not val_maps:
        raise ContractError("no alpha candidates to select from")
    best_alpha, best_map = val_maps[0]
    best_map = -math.inf if math.isnan(best_map) else best_map
    for alpha, value in val_maps[1:]:
        if math.isnan(value):
            continue
        if value > best_map:
            best_alpha, best_map = alpha, value
        elif value == best_map:
            LOG.warning("alpha=%s ties alpha=%s on val MAP %.6f; keeping %s", alpha, best_alpha, value, best_alpha)
    return float(best_alpha)


# --- plan and evaluation ---------------------------------------------------------


@dataclass(frozen=True)
class PlanEntry:
    system: str
    checkpoint: str
    which: str = PREDICT_WHICH_AVERAGE


@dataclass(frozen=True)
class SweepEntry:
    alpha: float
    val_map: float
    checkpoint: str


@dataclass(frozen=True)
class SeedPlan:
    seed: int
    test_manifest: str
    train_manifest: str
    pretrained_checkpoint: str
    systems: tuple[PlanEntry, ...]
    sweep: tuple[SweepEntry, ...] = ()
    selected_alpha: float | None = None
    class_names: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "test_manifest": self.test_manifest,
            "train_manifest": self.train_manifest,
            "pretrained_checkpoint": self.pretrained_checkpoint,
            "class_names": list(self.class_names),
            "selected_alpha": self.selected_alpha,
            "systems": [dataclasses.asdict(e) for e in self.systems],
            "sweep": [dataclasses.asdict(e) for e in self.sweep],
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "SeedPlan":
        selected = raw.get("selected_alpha")
        return cls(
            seed=int(raw["seed"]),
            test_manifest=str(raw["test_manifest"]),
            train_manifest=str(raw.get("train_manifest", "")),
            pretrained_checkpoint=str(raw["pretrained_checkpoint"]),
            systems=tuple(PlanEntry(**e) for e in raw.get("systems", []) or []),
            sweep=tuple(
                SweepEntry(alpha=float(e["alpha"]), val_map=float(e["val_map"]), checkpoint=str(e["checkpoint"]))
                for e in raw.get("sweep", []) or []
            ),
            selected_alpha=(float(selected) if selected is not None else None),
            class_names=tuple(str(x) for x in raw.get("class_names", []) or []),
        )


def write_plan(seed_dir: Path, plan: SeedPlan) -> Path:
    path = seed_dir / PLAN_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(plan.to_dict(), sort_keys=False), encoding="utf-8")
    return path


def read_plan(seed_dir: Path) -> SeedPlan:
    path = seed_dir / PLAN_FILE
    return SeedPlan.from_dict(yaml.safe_load(path.read_text(encoding="utf-8")) or {})


def _noisy_class_rows(seed: int, noise, baseline: EvalReport | None, weblynet: EvalReport | None):
    if noise is None or not noise.available or baseline is None or weblynet is None:
        return ()
    return tuple(
        NoisyClassComparison(
            seed=seed,
            class_name=row.class_name,
            fp_count=row.fp_count,
            fp_rate=row.fp_rate,
            baseline_ap=baseline.per_class_ap.get(row.class_name, float("nan")),
            weblynet_ap=weblynet.per_class_ap.get(row.class_name, float("nan")),
        )
        for row in noise.highlighted_rows()
    )


def evaluate_plan(seed_dir: Path, plan: SeedPlan | None = None) -> SeedOutcome:
    plan = plan or read_plan(seed_dir)
    test = load_manifest(seed_dir / plan.test_manifest, plan.class_names or None, split="test")
    pretrained = load_checkpoint(seed_dir / plan.pretrained_checkpoint)
    test = build_view2(pretrained.network(ROLE_PRETRAINED), test)

    loaded: dict[str, TrainedSystem] = {}

    def system_at(checkpoint: str) -> TrainedSystem:
        if checkpoint not in loaded:
            loaded[checkpoint] = load_checkpoint(seed_dir / checkpoint)
        return loaded[checkpoint]

    reports = tuple(
        evaluate(system_at(entry.checkpoint), test, entry.which, name=entry.system) for entry in plan.systems
    )
    sweep = tuple(
        SweepRow(
            seed=plan.seed,
            alpha=entry.alpha,
            val_map=entry.val_map,
            test_map=evaluate(system_at(entry.checkpoint), test, PREDICT_WHICH_AVERAGE).map,
            selected=plan.selected_alpha is not None and entry.alpha == plan.selected_alpha,
        )
        for entry in plan.sweep
    )

    noise = None
    if plan.train_manifest:
        noise = analyze_noise(
            load_manifest(seed_dir / plan.train_manifest, plan.class_names or None, split="train"),
            top=TOP_NOISY_CLASSES,
        )
    by_name = {report.system_name: report for report in reports}
    return SeedOutcome(
        seed=plan.seed,
        reports=reports,
        sweep=sweep,
        selected_alpha=plan.selected_alpha,
        noise=noise,
        noisy_classes=_noisy_class_rows(plan.seed, noise, by_name.get(SYSTEM_N1_SELF), by_name.get(SYSTEM_WEBLYNET)),
    )
