from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
from google.protobuf.message import DecodeError

from core import autodiff as ad
from core.errors import CheckpointError
from core.networks import Network, spec_from_dict, spec_to_dict
from services.training_service import TrainedSystem
from .proto_stubs import pb
from .utils import canonical_json, ensure_dir

LOG = logging.getLogger("weblynet")

FORMAT_VERSION = 1


def _tensor_entry(name: str, values: np.ndarray):
    values = np.asarray(values, dtype=np.float64)
    return pb.TensorEntry(
        name=name,
        shape=[int(d) for d in values.shape],
        data=np.ascontiguousarray(values, dtype="<f8").tobytes(),
    )


def _tensor_values(entry) -> np.ndarray:
    shape = tuple(int(d) for d in entry.shape)
    expected = int(np.prod(shape)) * 8
    if len(entry.data) != expected:
        raise CheckpointError(f"tensor {entry.name}: {len(entry.data)} bytes for shape {shape}")
    return np.frombuffer(entry.data, dtype="<f8").reshape(shape).astype(np.float64)


def network_to_proto(net: Network):
    return pb.NetworkState(
        role=net.name,
        spec_kind=net.spec.kind,
        spec_json=canonical_json(spec_to_dict(net.spec)),
        seed=net.seed,
        params=[_tensor_entry(name, t.data) for name, t in net.params.items()],
        buffers=[_tensor_entry(name, values) for name, values in net.buffers.items()],
    )


def network_from_proto(state) -> Network:
    try:
        spec = spec_from_dict(json.loads(state.spec_json))
    except (ValueError, TypeError) as exc:
        raise CheckpointError(f"network {state.role}: unreadable spec ({exc})") from exc
    if spec.kind != state.spec_kind:
        raise CheckpointError(f"network {state.role}: spec kind {spec.kind} != recorded {state.spec_kind}")
    params = {
        entry.name: ad.Tensor(_tensor_values(entry), requires_grad=True, name=entry.name) for entry in state.params
    }
    buffers = {entry.name: _tensor_values(entry) for entry in state.buffers}
    return Network(spec, name=state.role, params=params, buffers=buffers, seed=int(state.seed)).eval()


def save_checkpoint(path: Path, system: TrainedSystem) -> Path:
    message = pb.Checkpoint(
        format_version=FORMAT_VERSION,
        system_name=system.name,
        seed=int(system.seed),
        alphas=[float(a) for a in system.alphas],
        networks=[network_to_proto(net) for net in system.networks],
    )
    ensure_dir(Path(path).parent)
    Path(path).write_bytes(message.SerializeToString(deterministic=True))
    LOG.info("saved checkpoint system=%s networks=%s path=%s", system.name, len(system.networks), path)
    return Path(path)


def load_checkpoint(path: Path) -> TrainedSystem:
    try:
        payload = Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise CheckpointError(f"checkpoint not found: {path}") from exc
    message = pb.Checkpoint()
    try:
        message.ParseFromString(payload)
    except DecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    if message.format_version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format {message.format_version}")
    if not message.networks:
        raise CheckpointError(f"{path}: checkpoint holds no networks")
    return TrainedSystem(
        name=message.system_name,
        networks=[network_from_proto(state) for state in message.networks],
        seed=int(message.seed),
        alphas=tuple(float(a) for a in message.alphas),
    )
