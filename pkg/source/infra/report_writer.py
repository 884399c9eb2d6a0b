from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import Iterable, Sequence

from jinja2 import Environment, FileSystemLoader, StrictUndefined

from core.models import EvalReport, NoiseReport, SeedOutcome
from services.evaluation_service import SystemSummary
from .utils import ensure_dir, format_alpha

LOG = logging.getLogger("weblynet")

SOURCE_DIR = Path(__file__).resolve().parents[1]

SUMMARY_CSV = "summary.csv"
PER_CLASS_CSV = "per_class.csv"
SWEEP_CSV = "alpha_sweep.csv"
NOISE_CSV = "noise.csv"
NOISY_CLASSES_CSV = "noisy_classes.csv"
SUMMARY_MD = "summary.md"


def fmt(value: float | None) -> str:
    if value is None:
        return ""
    return repr(float(value))


def _write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence[object]]) -> Path:
    ensure_dir(path.parent)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
    return path


def write_eval_report(path: Path, report: EvalReport) -> Path:
    rows = [(name, fmt(ap)) for name, ap in report.per_class_ap.items()]
    rows.extend((name, "excluded") for name in report.excluded_classes)
    rows.append(("MAP", fmt(report.map)))
    return _write_rows(path, ("class", "ap"), rows)


def write_summary_csv(path: Path, summaries: Sequence[SystemSummary], seeds: Sequence[int]) -> Path:
    header = ("system", "mean_map", "std_map", "n_seeds", *[f"seed_{s}" for s in seeds])
    rows = [
        (s.system_name, fmt(s.mean), fmt(s.std), len(s.maps), *[fmt(m) for m in s.maps])
        for s in summaries
    ]
    return _write_rows(path, header, rows)


def write_per_class_csv(path: Path, outcomes: Sequence[SeedOutcome]) -> Path:
    rows = [
        (outcome.seed, report.system_name, name, fmt(ap))
        for outcome in outcomes
        for report in outcome.reports
        for name, ap in report.per_class_ap.items()
    ]
    return _write_rows(path, ("seed", "system", "class", "ap"), rows)


def write_sweep_csv(path: Path, outcomes: Sequence[SeedOutcome]) -> Path:
    rows = [
        (row.seed, format_alpha(row.alpha), fmt(row.val_map), fmt(row.test_map), int(row.selected))
        for outcome in outcomes
        for row in outcome.sweep
    ]
    return _write_rows(path, ("seed", "alpha", "val_map", "test_map", "selected"), rows)


def write_noise_csv(path: Path, seed_reports: Sequence[tuple[int, NoiseReport]]) -> Path:
    rows = [
        (seed, row.class_name, row.observed_positives, row.fp_count, fmt(row.fp_rate), int(row.highlighted))
        for seed, report in seed_reports
        for row in report.rows
    ]
    return _write_rows(path, ("seed", "class", "observed_positives", "fp_count", "fp_rate", "highlighted"), rows)


def write_noisy_classes_csv(path: Path, outcomes: Sequence[SeedOutcome]) -> Path:
    rows = [
        (row.seed, row.class_name, row.fp_count, fmt(row.fp_rate), fmt(row.baseline_ap), fmt(row.weblynet_ap))
        for outcome in outcomes
        for row in outcome.noisy_classes
    ]
    return _write_rows(path, ("seed", "class", "fp_count", "fp_rate", "baseline_ap", "weblynet_ap"), rows)


def _environment() -> Environment:
    env = Environment(
        loader=FileSystemLoader(str(SOURCE_DIR / "templates")),
        undefined=StrictUndefined,
        autoescape=False,
        keep_trailing_newline=True,
    )
    env.filters["pct"] = lambda value: "n/a" if value != value else f"{100.0 * float(value):.2f}"
    env.filters["alpha"] = format_alpha
    return env


def render_summary(summaries: Sequence[SystemSummary], outcomes: Sequence[SeedOutcome]) -> str:
    return _environment().get_template("summary.md.j2").render(summaries=summaries, outcomes=outcomes)


def render_noise_report(seed_reports: Sequence[tuple[int, NoiseReport]]) -> str:
    return _environment().get_template("noise_report.md.j2").render(seed_reports=seed_reports)


def write_experiment_reports(
    output_dir: Path, summaries: Sequence[SystemSummary], outcomes: Sequence[SeedOutcome]
) -> list[Path]:
    seeds = [outcome.seed for outcome in outcomes]
    written = [
        write_summary_csv(output_dir / SUMMARY_CSV, summaries, seeds),
        write_per_class_csv(output_dir / PER_CLASS_CSV, outcomes),
        write_sweep_csv(output_dir / SWEEP_CSV, outcomes),
        write_noisy_classes_csv(output_dir / NOISY_CLASSES_CSV, outcomes),
    ]
    noise = [(o.seed, o.noise) for o in outcomes if o.noise is not None and o.noise.available]
    if noise:
        written.append(write_noise_csv(output_dir / NOISE_CSV, noise))
    summary_md = output_dir / SUMMARY_MD
    summary_md.write_text(render_summary(summaries, outcomes), encoding="utf-8")
    written.append(summary_md)
    LOG.info("wrote %s report files to %s", len(written), output_dir)
    return written
