from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractError, DimensionError, SchemaError

SPLITS = ("train", "val", "test", "pretrain")
TRAIN_MODES = ("joint", "self")
PREDICT_WHICH_AVERAGE = "average"
N2_INPUT_VIEWS = ("view2", "view1_mean")


def _scaled(count: int, scale: float) -> int:
    return max(1, int(round(count * scale)))


@dataclass(frozen=True)
class N1Spec:
    """Segment CNN over an N×d view-1 matrix laid out as a 1×N×d image.

    ``time_kernel=1`` (the default) gives 1×3 block kernels, so every segment is
    processed on its own and the pooled outputs and F2 features are invariant to
    segment order and duplication. That drops any temporal context between
    neighbouring segments. ``time_kernel=3`` restores that context at the cost of
    the invariance.
    """

    num_classes: int
    block_filters: tuple[int, int, int, int] = (64, 128, 256, 256)
    f1_filters: int = 1024
    f2_filters: int = 1024
    f1_kernel_w: int = 8
    width_scale: float = 1.0
    embedding_dim: int = 128
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    time_kernel: int = 1

    kind = "n1"

    def __post_init__(self) -> None:
        if len(self.block_filters) != 4 or any(int(f) < 1 for f in self.block_filters):
            raise ContractError(f"block_filters must be 4 positive ints, got {self.block_filters}")
        if self.num_classes < 1 or self.f1_filters < 1 or self.f2_filters < 1:
            raise ContractError("num_classes, f1_filters and f2_filters must be positive")
        if self.width_scale <= 0:
            raise ContractError(f"width_scale must be positive, got {self.width_scale}")
        if self.embedding_dim % 16:
            raise DimensionError(f"embedding_dim {self.embedding_dim} must survive four (1,2) poolings")
        if self.f1_kernel_w != self.embedding_dim // 16:
            raise DimensionError(
                f"f1_kernel_w={self.f1_kernel_w} must equal post-pooling width {self.embedding_dim // 16}"
            )
        if self.time_kernel not in (1, 3):
            raise ContractError(f"time_kernel must be 1 or 3, got {self.time_kernel}")

    @property
    def scaled_blocks(self) -> tuple[int, ...]:
        return tuple(_scaled(f, self.width_scale) for f in self.block_filters)

    @property
    def scaled_f1(self) -> int:
        return _scaled(self.f1_filters, self.width_scale)

    @property
    def scaled_f2(self) -> int:
        return _scaled(self.f2_filters, self.width_scale)

    @property
    def input_view(self) -> str:
        return "view1"


@dataclass(frozen=True)
class N2Spec:
    num_classes: int
    input_dim: int = 1024
    hidden: tuple[int, int, int] = (2048, 1024, 1024)
    dropout_p: float = 0.4
    width_scale: float = 1.0
    input_view: str = "view2"

    kind = "n2"

    def __post_init__(self) -> None:
        if len(self.hidden) != 3 or any(int(h) < 1 for h in self.hidden):
            raise ContractError(f"hidden must be 3 positive ints, got {self.hidden}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ContractError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")
        if self.num_classes < 1 or self.input_dim < 1:
            raise ContractError("num_classes and input_dim must be positive")
        if self.width_scale <= 0:
            raise ContractError(f"width_scale must be positive, got {self.width_scale}")
        if self.input_view not in N2_INPUT_VIEWS:
            raise ContractError(f"input_view must be one of {N2_INPUT_VIEWS}, got {self.input_view}")

    @property
    def scaled_hidden(self) -> tuple[int, ...]:
        return tuple(_scaled(h, self.width_scale) for h in self.hidden)


NetworkSpec = N1Spec | N2Spec


@dataclass(frozen=True, eq=False)
class TrainingExample:
    id: str
    view1: np.ndarray
    view2: np.ndarray | None
    labels: np.ndarray


@dataclass(frozen=True, eq=False)
class Recording:
    id: str
    view1: np.ndarray
    labels: np.ndarray
    view2: np.ndarray | None = None
    true_labels: np.ndarray | None = None
    feature_file: str | None = None

    def __post_init__(self) -> None:
        if self.view1.ndim != 2 or self.view1.shape[0] < 1:
            raise DimensionError(f"recording {self.id}: view1 must be N×d with N ≥ 1, got {self.view1.shape}")
        if self.labels.ndim != 1 or int(self.labels.sum()) < 1:
            raise SchemaError(f"recording {self.id}: labels must be multi-hot with at least one positive")
        if self.true_labels is not None and self.true_labels.shape != self.labels.shape:
            raise SchemaError(f"recording {self.id}: true_labels shape differs from labels")

    @property
    def noise_flags(self) -> np.ndarray | None:
        if self.true_labels is None:
            return None
        return (self.labels > 0) & (self.true_labels == 0)

    def training_example(self) -> TrainingExample:
        return TrainingExample(id=self.id, view1=self.view1, view2=self.view2, labels=self.labels)


@dataclass(frozen=True, eq=False)
class Dataset:
    recordings: tuple[Recording, ...]
    class_names: tuple[str, ...]
    split: str = "train"

    def __post_init__(self) -> None:
        if self.split not in SPLITS:
            raise SchemaError(f"unknown split {self.split}")
        seen: set[str] = set()
        width = len(self.class_names)
        for rec in self.recordings:
            if rec.id in seen:
                raise SchemaError(f"duplicate recording id: {rec.id}")
            seen.add(rec.id)
            if rec.labels.shape[0] != width:
                raise SchemaError(f"recording {rec.id}: {rec.labels.shape[0]} labels for {width} classes")

    def __len__(self) -> int:
        return len(self.recordings)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def has_true_labels(self) -> bool:
        return bool(self.recordings) and all(r.true_labels is not None for r in self.recordings)

    def training_view(self) -> list[TrainingExample]:
        return [rec.training_example() for rec in self.recordings]

    def label_matrix(self) -> np.ndarray:
        if not self.recordings:
            return np.zeros((0, self.num_classes))
        return np.stack([rec.labels for rec in self.recordings]).astype(np.float64)

    def subset(self, indices: Sequence[int], split: str) -> "Dataset":
        return Dataset(
            recordings=tuple(self.recordings[i] for i in indices),
            class_names=self.class_names,
            split=split,
        )


@dataclass(frozen=True)
class NoiseModel:
    fp_rates: tuple[float, ...]

    def __post_init__(self) -> None:
        for rate in self.fp_rates:
            if not 0.0 <= float(rate) < 1.0:
                raise ContractError(f"fp_rate must lie in [0, 1), got {rate}")

    @property
    def fn_rates(self) -> tuple[float, ...]:
        return tuple(0.0 for _ in self.fp_rates)

    @classmethod
    def clean(cls, num_classes: int) -> "NoiseModel":
        return cls(fp_rates=tuple(0.0 for _ in range(num_classes)))


@dataclass(frozen=True)
class SyntheticOptions:
    embedding_dim: int = 128
    min_segments: int = 8
    max_segments: int = 24
    max_classes_per_recording: int = 3
    signal_noise: float = 0.1
    n_prototypes: int = 32
    min_angle_deg: float = 60.0
    prototype_seed: int = 0
    activity: float = 0.6


@dataclass(frozen=True)
class TrainConfig:
    n_epochs: int = 50
    batch_size: int = 32
    learning_rates: tuple[float, ...] = (1e-3,)
    alphas: tuple[float, ...] = ()
    seed: int = 0
    mode: str = "joint"
    divergence: str = "sym_gkl"

    def __post_init__(self) -> None:
        if self.mode not in TRAIN_MODES:
            raise ContractError(f"mode must be one of {TRAIN_MODES}, got {self.mode}")
        if self.n_epochs < 0 or self.batch_size < 1:
            raise ContractError("n_epochs must be ≥ 0 and batch_size ≥ 1")
        if any(lr <= 0 for lr in self.learning_rates):
            raise ContractError("learning rates must be positive")
        if any(a < 0 for a in self.alphas):
            raise ContractError(f"divergence weights must be non-negative, got {self.alphas}")

    def rate_for(self, k: int) -> float:
        if len(self.learning_rates) == 1:
            return float(self.learning_rates[0])
        return float(self.learning_rates[k])


def pair_count(k: int) -> int:
    return k * (k - 1) // 2


def broadcast_alphas(alpha: float | Sequence[float], k: int) -> tuple[float, ...]:
    if isinstance(alpha, (int, float)):
        return tuple(float(alpha) for _ in range(pair_count(k)))
    return tuple(float(a) for a in alpha)


@dataclass(frozen=True)
class LossBreakdown:
    per_network_bce: tuple[float, ...]
    per_pair_divergence: tuple[float, ...]
    alphas: tuple[float, ...]
    total: float

    def recomposed_total(self) -> float:
        total = self.per_network_bce[0]
        for value in self.per_network_bce[1:]:
            total += value
        for alpha, div in zip(self.alphas, self.per_pair_divergence):
            total += alpha * div
        return total

    @classmethod
    def averaged(cls, items: Sequence["LossBreakdown"]) -> "LossBreakdown":
        if not items:
            raise ContractError("cannot average an empty list of loss breakdowns")
        bce = tuple(float(v) for v in np.mean([b.per_network_bce for b in items], axis=0))
        div: tuple[float, ...] = ()
        if items[0].alphas:
            div = tuple(float(v) for v in np.mean([b.per_pair_divergence for b in items], axis=0))
        draft = cls(per_network_bce=bce, per_pair_divergence=div, alphas=items[0].alphas, total=0.0)
        return cls(per_network_bce=bce, per_pair_divergence=div, alphas=items[0].alphas, total=draft.recomposed_total())

    def to_record(self, epoch: int) -> dict:
        return {
            "epoch": epoch,
            "per_network_bce": list(self.per_network_bce),
            "per_pair_divergence": list(self.per_pair_divergence),
            "alphas": list(self.alphas),
            "total": self.total,
        }


@dataclass(frozen=True)
class EvalReport:
    system_name: str
    per_class_ap: dict[str, float]
    map: float
    n_test: int
    excluded_classes: tuple[str, ...] = ()

    def recomputed_map(self) -> float:
        values = list(self.per_class_ap.values())
        return float(np.mean(values)) if values else float("nan")


@dataclass(frozen=True)
class NoiseClassRow:
    class_name: str
    observed_positives: int
    fp_count: int
    fp_rate: float
    highlighted: bool = False


@dataclass(frozen=True)
class NoiseReport:
    available: bool
    rows: tuple[NoiseClassRow, ...] = ()
    message: str = ""

    def highlighted_rows(self) -> tuple[NoiseClassRow, ...]:
        return tuple(row for row in self.rows if row.highlighted)


@dataclass(frozen=True)
class SweepRow:
    seed: int
    alpha: float
    val_map: float
    test_map: float
    selected: bool = False


@dataclass(frozen=True)
class NoisyClassComparison:
    seed: int
    class_name: str
    fp_count: int
    fp_rate: float
    baseline_ap: float
    weblynet_ap: float


@dataclass(frozen=True)
class SeedOutcome:
    seed: int
    reports: tuple[EvalReport, ...]
    sweep: tuple[SweepRow, ...] = ()
    selected_alpha: float | None = None
    noise: NoiseReport | None = None
    noisy_classes: tuple[NoisyClassComparison, ...] = ()


# --- experiment settings ------------------------------------------------------


@dataclass(frozen=True)
class SyntheticDataConfig:
    num_classes: int = 10
    n_train: int = 2000
    n_test: int = 500
    n_pretrain: int = 1000
    pretrain_classes: int = 20
    noisy_class_fraction: float = 0.5
    fp_rate_low: float = 0.3
    fp_rate_high: float = 0.5
    options: SyntheticOptions = field(default_factory=SyntheticOptions)


@dataclass(frozen=True)
class ManifestSourceConfig:
    train: Path
    test: Path
    pretrain: Path
    class_names: tuple[str, ...] = ()
    pretrain_class_names: tuple[str, ...] = ()


@dataclass(frozen=True)
class NetworkOverrides:
    width_scale: float = 0.125
    block_filters: tuple[int, int, int, int] = (64, 128, 256, 256)
    f1_filters: int = 1024
    f2_filters: int = 1024
    n2_hidden: tuple[int, int, int] = (2048, 1024, 1024)
    dropout_p: float = 0.4
    time_kernel: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    source: str
    synthetic: SyntheticDataConfig
    manifests: ManifestSourceConfig | None
    networks: NetworkOverrides
    train: TrainConfig
    pretrain_epochs: int
    alpha_grid: tuple[float, ...]
    seeds: tuple[int, ...]
    validation_fraction: float
    output_dir: Path
    ledger_db: Path
    workers: int = 1
