from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from core import autodiff as ad
from core.errors import ContractError, DataError, DimensionError
from core.losses import combined_loss, get_divergence
from core.models import (
    PREDICT_WHICH_AVERAGE,
    Dataset,
    LossBreakdown,
    N2Spec,
    Recording,
    TrainConfig,
    TrainingExample,
    broadcast_alphas,
    pair_count,
)
from core.networks import Network, network_input, recording_output, required_view
from core.rng import STREAM_SHUFFLE, stream_rng
from .optim import AdamState, adam_step

LOG = logging.getLogger("weblynet")


@dataclass
class TrainedSystem:
    name: str
    networks: list[Network]
    seed: int = 0
    alphas: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        roles = [net.name for net in self.networks]
        if len(set(roles)) != len(roles):
            raise ContractError(f"network roles must be unique within a system, got {roles}")

    @property
    def roles(self) -> list[str]:
        return [net.name for net in self.networks]

    def network(self, role: str) -> Network:
        for net in self.networks:
            if net.name == role:
                return net
        raise ContractError(f"system {self.name} has no network {role}; roles are {self.roles}")

    @classmethod
    def ensemble(cls, name: str, systems: Sequence["TrainedSystem"]) -> "TrainedSystem":
        networks = [net for system in systems for net in system.networks]
        return cls(name=name, networks=networks, seed=systems[0].seed if systems else 0)


@dataclass
class TrainingResult:
    system: TrainedSystem
    epoch_log: list[LossBreakdown] = field(default_factory=list)


def _as_examples(data: Dataset | Sequence[TrainingExample]) -> list[TrainingExample]:
    if isinstance(data, Dataset):
        return data.training_view()
    return [item.training_example() if isinstance(item, Recording) else item for item in data]


def check_views(networks: Sequence[Network], examples: Sequence[TrainingExample]) -> None:
    for net in networks:
        view = required_view(net.spec)
        for example in examples:
            if view == "view2" and example.view2 is None:
                raise DataError(f"network {net.name} needs view2 but recording {example.id} has none")
        spec = net.spec
        if examples and isinstance(spec, N2Spec):
            width = network_input(net, examples[0]).shape[0]
            if width != spec.input_dim:
                raise DimensionError(f"network {net.name} expects {spec.input_dim} inputs, data has {width}")


def _resolve_alphas(networks: Sequence[Network], cfg: TrainConfig) -> tuple[float, ...]:
    k = len(networks)
    if cfg.mode == "self":
        if k != 1:
            raise ContractError(f"self mode trains exactly one network, got {k}")
        return ()
    if k < 2:
        raise ContractError(f"joint mode needs K ≥ 2 networks, got {k}")
    if len(cfg.alphas) == 1:
        return broadcast_alphas(cfg.alphas[0], k)
    if len(cfg.alphas) != pair_count(k):
        raise ContractError(f"K={k} needs {pair_count(k)} divergence weights, got {len(cfg.alphas)}")
    return tuple(cfg.alphas)


def batch_loss(
    networks: Sequence[Network],
    batch: Sequence[TrainingExample],
    alphas: Sequence[float],
    divergence=None,
) -> tuple[ad.Tensor, LossBreakdown]:
    divergence = divergence or get_divergence("sym_gkl")
    total: ad.Tensor | None = None
    parts: list[LossBreakdown] = []
    for example in batch:
        outs = [recording_output(net, example) for net in networks]
        loss, breakdown = combined_loss(outs, example.labels, alphas, divergence)
        total = loss if total is None else ad.add(total, loss)
        parts.append(breakdown)
    if total is None:
        raise ContractError("empty minibatch")
    return ad.scalar_mul(total, 1.0 / len(batch)), LossBreakdown.averaged(parts)


def train(
    networks: Sequence[Network],
    data: Dataset | Sequence[TrainingExample],
    cfg: TrainConfig,
    *,
    system_name: str = "",
    epoch_log_path: Path | None = None,
) -> TrainingResult:
    networks = list(networks)
    examples = _as_examples(data)
    alphas = _resolve_alphas(networks, cfg)
    if len(cfg.learning_rates) not in (1, len(networks)):
        raise ContractError(f"need 1 or {len(networks)} learning rates, got {len(cfg.learning_rates)}")
    check_views(networks, examples)
    if cfg.n_epochs > 0 and not examples:
        raise DataError("training set is empty")

    divergence = get_divergence(cfg.divergence)
    optimizers = [AdamState.for_params(net.params, cfg.rate_for(k)) for k, net in enumerate(networks)]
    shuffle = stream_rng(cfg.seed, STREAM_SHUFFLE)
    name = system_name or "+".join(net.name for net in networks)
    if epoch_log_path is not None:
        epoch_log_path.parent.mkdir(parents=True, exist_ok=True)
        epoch_log_path.write_text("", encoding="utf-8")

    log: list[LossBreakdown] = []
    for net in networks:
        net.train()
    try:
        for epoch in range(1, cfg.n_epochs + 1):
            order = shuffle.permutation(len(examples))
            batches: list[LossBreakdown] = []
            for start in range(0, len(order), cfg.batch_size):
                batch = [examples[i] for i in order[start : start + cfg.batch_size]]
                loss, breakdown = batch_loss(networks, batch, alphas, divergence)
                ad.backward(loss)
                for net, optimizer in zip(networks, optimizers):
                    adam_step(optimizer, net.params)
                batches.append(breakdown)
            summary = LossBreakdown.averaged(batches)
            log.append(summary)
            LOG.info(
                "system=%s epoch=%s/%s total=%.6f bce=%s div=%s",
                name,
                epoch,
                cfg.n_epochs,
                summary.total,
                [round(v, 6) for v in summary.per_network_bce],
                [round(v, 6) for v in summary.per_pair_divergence],
            )
            if epoch_log_path is not None:
                with epoch_log_path.open("a", encoding="utf-8") as handle:
                    handle.write(json.dumps(summary.to_record(epoch), sort_keys=True) + "\n")
    finally:
        for net in networks:
            net.eval()

    system = TrainedSystem(name=name, networks=networks, seed=cfg.seed, alphas=alphas)
    return TrainingResult(system=system, epoch_log=log)


def predict(
    system: TrainedSystem, recording: Recording | TrainingExample, which: str = PREDICT_WHICH_AVERAGE
) -> np.ndarray:
    example = recording.training_example() if isinstance(recording, Recording) else recording
    chosen = system.networks if which == PREDICT_WHICH_AVERAGE else [system.network(which)]
    for net in chosen:
        if net.training:
            raise ContractError(f"network {net.name} is in train mode; predict needs eval mode")
    with ad.no_grad():
        outs = [recording_output(net, example).data for net in chosen]
    if len(outs) == 1:
        return outs[0].copy()
    return np.sum(outs, axis=0) / len(outs)


def predict_matrix(system: TrainedSystem, dataset: Dataset, which: str = PREDICT_WHICH_AVERAGE) -> np.ndarray:
    if not dataset.recordings:
        return np.zeros((0, dataset.num_classes))
    return np.stack([predict(system, rec, which) for rec in dataset.recordings])
