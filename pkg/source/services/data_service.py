from __future__ import annotations

import dataclasses
import logging

import numpy as np

from core import autodiff as ad
from core.errors import ContractError, DimensionError
from core.models import Dataset, N1Spec, NoiseModel, Recording, SyntheticDataConfig, SyntheticOptions
from core.networks import Network, extract_f2
from core.rng import STREAM_FEATURES, STREAM_NOISE, STREAM_PROTOTYPES, STREAM_SPLIT, derive_seed, stream_rng

LOG = logging.getLogger("weblynet")

_MAX_PROTOTYPE_TRIES = 10_000


def class_names_for(num_classes: int) -> tuple[str, ...]:
    return tuple(f"class_{c:02d}" for c in range(num_classes))


def make_prototypes(options: SyntheticOptions) -> np.ndarray:
    rng = stream_rng(options.prototype_seed, STREAM_PROTOTYPES)
    max_cos = float(np.cos(np.deg2rad(options.min_angle_deg)))
    accepted: list[np.ndarray] = []
    tries = 0
    while len(accepted) < options.n_prototypes:
        tries += 1
        if tries > _MAX_PROTOTYPE_TRIES * options.n_prototypes:
            raise ContractError(
                f"cannot place {options.n_prototypes} prototypes {options.min_angle_deg}° apart "
                f"in {options.embedding_dim} dimensions"
            )
        v = rng.normal(size=options.embedding_dim)
        v /= np.linalg.norm(v)
        if all(float(v @ u) <= max_cos for u in accepted):
            accepted.append(v)
    return np.stack(accepted)


def _inject_false_positives(
    true_labels: np.ndarray, noise: NoiseModel, rng: np.random.Generator
) -> np.ndarray:
    observed = true_labels.copy()
    for c, rate in enumerate(noise.fp_rates):
        positives = int(true_labels[:, c].sum())
        wanted = int(np.floor(rate * positives / (1.0 - rate) + 0.5))
        candidates = np.flatnonzero(true_labels[:, c] == 0)
        take = min(wanted, candidates.size)
        if take < wanted:
            LOG.warning("class %s: only %s of %s spurious positives available", c, take, wanted)
        picked = rng.choice(candidates, size=take, replace=False) if take else np.zeros(0, dtype=int)
        observed[picked, c] = 1
    return observed


def generate_synthetic(
    n_recordings: int,
    num_classes: int,
    noise: NoiseModel,
    seed: int,
    *,
    options: SyntheticOptions = SyntheticOptions(),
    split: str = "train",
    id_prefix: str = "syn",
) -> Dataset:
    if num_classes < 2:
        raise ContractError(f"need at least 2 classes, got {num_classes}")
    if n_recordings < num_classes:
        raise ContractError(f"need at least as many recordings ({n_recordings}) as classes ({num_classes})")
    if len(noise.fp_rates) != num_classes:
        raise ContractError(f"noise model covers {len(noise.fp_rates)} classes, dataset has {num_classes}")
    if num_classes > options.n_prototypes:
        raise ContractError(f"{num_classes} classes but only {options.n_prototypes} prototypes")
    if not 1 <= options.min_segments <= options.max_segments:
        raise ContractError(f"invalid segment range [{options.min_segments}, {options.max_segments}]")

    prototypes = make_prototypes(options)[:num_classes]
    rng = stream_rng(seed, STREAM_FEATURES)
    max_k = min(options.max_classes_per_recording, num_classes)

    features: list[np.ndarray] = []
    true_labels = np.zeros((n_recordings, num_classes), dtype=np.int8)
    for i in range(n_recordings):
        k = int(rng.integers(1, max_k + 1))
        classes = rng.choice(num_classes, size=k, replace=False)
        if i < num_classes and i not in classes:
            classes[0] = i
        n_segments = int(rng.integers(options.min_segments, options.max_segments + 1))
        active = rng.random((n_segments, k)) < options.activity
        for col in range(k):
            if not active[:, col].any():
                active[int(rng.integers(n_segments)), col] = True
        segments = active.astype(np.float64) @ prototypes[classes]
        segments = segments + rng.normal(0.0, options.signal_noise, size=segments.shape)
        features.append(segments)
        true_labels[i, classes] = 1

    observed = _inject_false_positives(true_labels, noise, stream_rng(seed, STREAM_NOISE))
    names = class_names_for(num_classes)
    recordings = tuple(
        Recording(
            id=f"{id_prefix}-{i:05d}",
            view1=features[i],
            labels=observed[i].copy(),
            true_labels=true_labels[i].copy(),
        )
        for i in range(n_recordings)
    )
    return Dataset(recordings=recordings, class_names=names, split=split)


def webly_noise_model(cfg: SyntheticDataConfig) -> NoiseModel:
    n_noisy = int(round(cfg.num_classes * cfg.noisy_class_fraction))
    rates = np.zeros(cfg.num_classes)
    if n_noisy:
        rates[:n_noisy] = np.linspace(cfg.fp_rate_low, cfg.fp_rate_high, n_noisy)
    return NoiseModel(fp_rates=tuple(float(r) for r in rates))


def synthetic_splits(cfg: SyntheticDataConfig, seed: int) -> dict[str, Dataset]:
    options = cfg.options
    return {
        "pretrain": generate_synthetic(
            cfg.n_pretrain,
            cfg.pretrain_classes,
            NoiseModel.clean(cfg.pretrain_classes),
            derive_seed(seed, "pretrain"),
            options=options,
            split="pretrain",
            id_prefix=f"pre{seed}",
        ),
        "train": generate_synthetic(
            cfg.n_train,
            cfg.num_classes,
            webly_noise_model(cfg),
            derive_seed(seed, "train"),
            options=options,
            split="train",
            id_prefix=f"web{seed}",
        ),
        "test": generate_synthetic(
            cfg.n_test,
            cfg.num_classes,
            NoiseModel.clean(cfg.num_classes),
            derive_seed(seed, "test"),
            options=options,
            split="test",
            id_prefix=f"tst{seed}",
        ),
    }


def clean_twin(ds: Dataset) -> Dataset:
    if not ds.has_true_labels:
        raise ContractError("clean twin needs true labels")
    recordings = tuple(dataclasses.replace(rec, labels=rec.true_labels.copy()) for rec in ds.recordings)
    return Dataset(recordings=recordings, class_names=ds.class_names, split=ds.split)


def split_train_val(ds: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    if not 0.0 <= fraction < 1.0:
        raise ContractError(f"validation fraction must lie in [0, 1), got {fraction}")
    n = len(ds)
    n_val = int(round(n * fraction))
    if fraction > 0 and n > 1:
        n_val = max(1, n_val)
    order = stream_rng(seed, STREAM_SPLIT).permutation(n)
    val_idx = sorted(int(i) for i in order[:n_val])
    train_idx = sorted(int(i) for i in order[n_val:])
    return ds.subset(train_idx, "train"), ds.subset(val_idx, "val")


def build_view2(pretrained: Network, ds: Dataset) -> Dataset:
    spec = pretrained.spec
    if not isinstance(spec, N1Spec):
        raise ContractError(f"view2 needs a pretrained N1 network, got {spec.kind}")
    recordings: list[Recording] = []
    with ad.no_grad():
        for rec in ds.recordings:
            if rec.view1.shape[1] != spec.embedding_dim:
                raise DimensionError(
                    f"recording {rec.id}: view1 width {rec.view1.shape[1]} vs pretrained {spec.embedding_dim}"
                )
            view2 = extract_f2(pretrained, rec.view1).data.copy()
            recordings.append(dataclasses.replace(rec, view2=view2))
    LOG.info("built view2 for %s recordings (split=%s, dim=%s)", len(recordings), ds.split, spec.scaled_f2)
    return Dataset(recordings=tuple(recordings), class_names=ds.class_names, split=ds.split)
