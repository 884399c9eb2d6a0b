from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from core.errors import DimensionError, UndefinedMetricError
from core.models import PREDICT_WHICH_AVERAGE, Dataset, EvalReport
from .training_service import TrainedSystem, predict_matrix

LOG = logging.getLogger("weblynet")


def average_precision(scores: Sequence[float], relevance: Sequence[int]) -> float:
    """Non-interpolated AP: mean precision@k over relevant ranks, descending score, stable ties."""
    scores = np.asarray(scores, dtype=np.float64)
    relevance = np.asarray(relevance)
    if scores.shape != relevance.shape or scores.ndim != 1:
        raise DimensionError(f"scores {scores.shape} and relevance {relevance.shape} must be equal-length vectors")
    relevant = relevance > 0
    n_relevant = int(relevant.sum())
    if n_relevant == 0:
        raise UndefinedMetricError("average precision is undefined without relevant items")
    order = np.argsort(-scores, kind="stable")
    hits = relevant[order]
    ranks = np.flatnonzero(hits) + 1
    precision_at_hits = np.arange(1, n_relevant + 1) / ranks
    return float(precision_at_hits.sum() / n_relevant)


def report_from_scores(
    system_name: str, scores: np.ndarray, labels: np.ndarray, class_names: Sequence[str]
) -> EvalReport:
    per_class: dict[str, float] = {}
    excluded: list[str] = []
    for c, name in enumerate(class_names):
        try:
            per_class[name] = average_precision(scores[:, c], labels[:, c])
        except UndefinedMetricError:
            excluded.append(name)
    if excluded:
        LOG.warning(
            "system=%s: %s classes without positives excluded from MAP: %s", system_name, len(excluded), excluded
        )
    values = list(per_class.values())
    return EvalReport(
        system_name=system_name,
        per_class_ap=per_class,
        map=float(np.mean(values)) if values else float("nan"),
        n_test=int(labels.shape[0]),
        excluded_classes=tuple(excluded),
    )


def evaluate(
    system: TrainedSystem, test: Dataset, which: str = PREDICT_WHICH_AVERAGE, *, name: str | None = None
) -> EvalReport:
    scores = predict_matrix(system, test, which)
    return report_from_scores(name or system.name, scores, test.label_matrix(), test.class_names)


@dataclass(frozen=True)
class SystemSummary:
    system_name: str
    maps: tuple[float, ...]

    @property
    def mean(self) -> float:
        return float(np.mean(self.maps)) if self.maps else float("nan")

    @property
    def std(self) -> float:
        return float(np.std(self.maps)) if self.maps else float("nan")


def summarize(reports_by_seed: dict[int, list[EvalReport]]) -> list[SystemSummary]:
    order: list[str] = []
    maps: dict[str, list[float]] = {}
    for seed in sorted(reports_by_seed):
        for report in reports_by_seed[seed]:
            if report.system_name not in maps:
                order.append(report.system_name)
                maps[report.system_name] = []
            maps[report.system_name].append(report.map)
    return [SystemSummary(system_name=name, maps=tuple(maps[name])) for name in order]
