"""Feature files and line-delimited JSON manifests.

A feature file holds one recording's view-1 matrix: the magic ``WBL1``, the
segment count and embedding width as little-endian u32, a one-byte
endianness tag, then N×d little-endian float64 values in row-major order.

A manifest line is ``{"id", "labels", "feature_file", "n_segments"}`` plus an
optional ``true_labels`` list that only synthetic data carries. Class names
live next to the manifest in ``classes.json``.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import struct
from pathlib import Path, PurePosixPath
from typing import Sequence
from urllib.parse import quote

import numpy as np

from core.errors import IngestionError, SchemaError
from core.models import Dataset, Recording
from .utils import canonical_json, ensure_dir

LOG = logging.getLogger("weblynet")

MAGIC = b"WBL1"
ENDIAN_LITTLE = 0
_HEADER = struct.Struct("<4sIIB")
CLASSES_FILE = "classes.json"
FEATURE_DIR = "features"
FEATURE_SUFFIX = ".wbl"
REQUIRED_FIELDS = ("id", "labels", "feature_file", "n_segments")


def write_feature_file(path: Path, matrix: np.ndarray) -> None:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise SchemaError(f"feature matrix must be 2-d, got shape {matrix.shape}")
    n, dim = matrix.shape
    ensure_dir(path.parent)
    with path.open("wb") as handle:
        handle.write(_HEADER.pack(MAGIC, n, dim, ENDIAN_LITTLE))
        handle.write(np.ascontiguousarray(matrix, dtype="<f8").tobytes())


def read_feature_file(path: Path) -> np.ndarray:
    try:
        payload = path.read_bytes()
    except FileNotFoundError as exc:
        raise IngestionError(f"feature file not found: {path}") from exc
    if len(payload) < _HEADER.size:
        raise IngestionError(f"feature file too short: {path}")
    magic, n, dim, endian = _HEADER.unpack_from(payload)
    if magic != MAGIC:
        raise IngestionError(f"{path}: bad magic {magic!r}")
    if endian != ENDIAN_LITTLE:
        raise IngestionError(f"{path}: unsupported endianness tag {endian}")
    body = payload[_HEADER.size :]
    if len(body) != n * dim * 8:
        raise IngestionError(f"{path}: expected {n}x{dim} float64 values, found {len(body)} bytes")
    return np.frombuffer(body, dtype="<f8").reshape(n, dim).astype(np.float64)


def _multi_hot(names: Sequence[str], class_index: dict[str, int], rec_id: str, field: str) -> np.ndarray:
    vec = np.zeros(len(class_index), dtype=np.int8)
    for name in names:
        if name not in class_index:
            raise SchemaError(f"recording {rec_id}: unknown class {name!r} in {field}")
        vec[class_index[name]] = 1
    return vec


def _read_rows(manifest_path: Path) -> list[dict]:
    try:
        lines = manifest_path.read_text(encoding="utf-8").splitlines()
    except FileNotFoundError as exc:
        raise IngestionError(f"manifest not found: {manifest_path}") from exc
    rows: list[dict] = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{manifest_path}:{lineno}: invalid JSON ({exc.msg})") from exc
        if not isinstance(row, dict):
            raise SchemaError(f"{manifest_path}:{lineno}: expected an object")
        missing = [key for key in REQUIRED_FIELDS if key not in row]
        if missing:
            raise SchemaError(f"{manifest_path}:{lineno}: missing fields {missing}")
        rows.append(row)
    return rows


def read_class_names(manifest_path: Path) -> tuple[str, ...] | None:
    sidecar = manifest_path.parent / CLASSES_FILE
    if not sidecar.exists():
        return None
    names = json.loads(sidecar.read_text(encoding="utf-8"))
    return tuple(str(n) for n in names)


def load_manifest(
    manifest_path: Path, class_names: Sequence[str] | None = None, *, split: str = "train"
) -> Dataset:
    manifest_path = Path(manifest_path)
    rows = _read_rows(manifest_path)
    names = tuple(class_names) if class_names else read_class_names(manifest_path)
    if not names:
        names = tuple(sorted({str(label) for row in rows for label in row["labels"]}))
    class_index = {name: i for i, name in enumerate(names)}

    seen: set[str] = set()
    recordings: list[Recording] = []
    for row in rows:
        rec_id = str(row["id"])
        if rec_id in seen:
            raise SchemaError(f"duplicate recording id: {rec_id}")
        seen.add(rec_id)
        labels = _multi_hot(row["labels"], class_index, rec_id, "labels")
        true_labels = None
        if row.get("true_labels") is not None:
            true_labels = _multi_hot(row["true_labels"], class_index, rec_id, "true_labels")
        feature_path = manifest_path.parent / str(row["feature_file"])
        if not feature_path.exists():
            raise IngestionError(f"recording {rec_id}: feature file missing: {feature_path}")
        view1 = read_feature_file(feature_path)
        if view1.shape[0] != int(row["n_segments"]):
            raise SchemaError(
                f"recording {rec_id}: manifest says {row['n_segments']} segments, file holds {view1.shape[0]}"
            )
        recordings.append(
            Recording(
                id=rec_id,
                view1=view1,
                labels=labels,
                true_labels=true_labels,
                feature_file=str(row["feature_file"]),
            )
        )

    LOG.info("loaded %s recordings from %s (%s classes)", len(recordings), manifest_path, len(names))
    return Dataset(recordings=tuple(recordings), class_names=names, split=split)


def default_feature_file(rec_id: str) -> str:
    return f"{FEATURE_DIR}/{quote(rec_id, safe='')}{FEATURE_SUFFIX}"


def _feature_target(root: Path, feature_file: str) -> Path:
    rel = PurePosixPath(feature_file)
    if rel.is_absolute() or ".." in rel.parts or not rel.parts:
        raise SchemaError(f"feature_file must stay inside the manifest directory, got {feature_file!r}")
    return root.joinpath(*rel.parts)


def manifest_row(rec: Recording, class_names: Sequence[str]) -> dict:
    row = {
        "id": rec.id,
        "labels": [class_names[c] for c in np.flatnonzero(rec.labels)],
        "feature_file": rec.feature_file or default_feature_file(rec.id),
        "n_segments": int(rec.view1.shape[0]),
    }
    if rec.true_labels is not None:
        row["true_labels"] = [class_names[c] for c in np.flatnonzero(rec.true_labels)]
    return row


def write_manifest(ds: Dataset, manifest_path: Path) -> Path:
    manifest_path = Path(manifest_path)
    root = ensure_dir(manifest_path.parent)
    lines: list[str] = []
    for rec in ds.recordings:
        row = manifest_row(rec, ds.class_names)
        write_feature_file(_feature_target(root, row["feature_file"]), rec.view1)
        lines.append(canonical_json(row))
    manifest_path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    (root / CLASSES_FILE).write_text(canonical_json(list(ds.class_names)) + "\n", encoding="utf-8")
    LOG.info("wrote %s recordings to %s", len(ds), manifest_path)
    return manifest_path


def write_view2_file(path: Path, ds: Dataset) -> Path:
    missing = [rec.id for rec in ds.recordings if rec.view2 is None]
    if missing:
        raise SchemaError(f"{len(missing)} recordings have no view2, first: {missing[0]}")
    write_feature_file(path, np.stack([rec.view2 for rec in ds.recordings]))
    ids_path = path.with_suffix(".ids.json")
    ids_path.write_text(canonical_json([rec.id for rec in ds.recordings]) + "\n", encoding="utf-8")
    return path


def attach_view2(ds: Dataset, path: Path) -> Dataset:
    matrix = read_feature_file(path)
    ids_path = path.with_suffix(".ids.json")
    ids = json.loads(ids_path.read_text(encoding="utf-8")) if ids_path.exists() else [rec.id for rec in ds.recordings]
    if len(ids) != matrix.shape[0]:
        raise SchemaError(f"{path}: {matrix.shape[0]} rows for {len(ids)} ids")
    rows = {str(rec_id): i for i, rec_id in enumerate(ids)}
    recordings = []
    for rec in ds.recordings:
        if rec.id not in rows:
            raise SchemaError(f"{path}: no view2 row for recording {rec.id}")
        recordings.append(dataclasses.replace(rec, view2=matrix[rows[rec.id]].copy()))
    return Dataset(recordings=tuple(recordings), class_names=ds.class_names, split=ds.split)
