from __future__ import annotations

import logging

import numpy as np

from core.models import Dataset, NoiseClassRow, NoiseReport

LOG = logging.getLogger("weblynet")

TOP_NOISY_CLASSES = 5
UNAVAILABLE_MESSAGE = "unavailable for real data"


def analyze_noise(ds: Dataset, top: int = TOP_NOISY_CLASSES) -> NoiseReport:
    if not ds.has_true_labels:
        LOG.warning("noise analysis skipped for split=%s: no true labels", ds.split)
        return NoiseReport(available=False, message=UNAVAILABLE_MESSAGE)

    observed = ds.label_matrix() > 0
    truth = np.stack([rec.true_labels for rec in ds.recordings]) > 0
    spurious = observed & ~truth
    rows = []
    for c, name in enumerate(ds.class_names):
        positives = int(observed[:, c].sum())
        fp = int(spurious[:, c].sum())
        rows.append((name, positives, fp, fp / positives if positives else 0.0))
    rows.sort(key=lambda row: (-row[2], row[0]))
    return NoiseReport(
        available=True,
        rows=tuple(
            NoiseClassRow(
                class_name=name,
                observed_positives=positives,
                fp_count=fp,
                fp_rate=rate,
                highlighted=rank < top and fp > 0,
            )
            for rank, (name, positives, fp, rate) in enumerate(rows)
        ),
    )
