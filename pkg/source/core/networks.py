from __future__ import annotations

import dataclasses
from typing import Any

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DataError, DimensionError
from .models import N1Spec, N2Spec, NetworkSpec, TrainingExample
from .rng import STREAM_DROPOUT, STREAM_INIT, stream_rng

MODE_TRAIN = "train"
MODE_EVAL = "eval"
HIDDEN_ACTIVATION = "relu"
OUTPUT_ACTIVATION = "sigmoid"


class Network:
    def __init__(
        self,
        spec: NetworkSpec,
        *,
        name: str,
        params: dict[str, Tensor],
        buffers: dict[str, np.ndarray] | None = None,
        seed: int = 0,
    ):
        self.spec = spec
        self.name = name
        self.params = params
        self.buffers = dict(buffers or {})
        self.seed = int(seed)
        self.mode = MODE_EVAL
        self.dropout_rng = stream_rng(seed, STREAM_DROPOUT, name)

    def train(self) -> "Network":
        self.mode = MODE_TRAIN
        return self

    def eval(self) -> "Network":
        self.mode = MODE_EVAL
        return self

    @property
    def training(self) -> bool:
        return self.mode == MODE_TRAIN

    def zero_grad(self) -> None:
        for tensor in self.params.values():
            tensor.zero_grad()

    def parameter_count(self) -> int:
        return int(sum(t.data.size for t in self.params.values()))

    def __repr__(self) -> str:
        return f"Network(name={self.name}, kind={self.spec.kind}, params={self.parameter_count()})"


# --- construction ---------------------------------------------------------------


def _kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _param(data: np.ndarray, name: str) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _n1_layout(spec: N1Spec) -> list[tuple[str, tuple[int, ...], bool]]:
    layers: list[tuple[str, tuple[int, ...], bool]] = []
    channels = 1
    for b, filters in enumerate(spec.scaled_blocks, start=1):
        for conv in (1, 2):
            layers.append((f"b{b}.conv{conv}", (filters, channels, spec.time_kernel, 3), True))
            channels = filters
    layers.append(("f1.conv", (spec.scaled_f1, channels, 1, spec.f1_kernel_w), True))
    layers.append(("f2.conv", (spec.scaled_f2, spec.scaled_f1, 1, 1), True))
    layers.append(("c.conv", (spec.num_classes, spec.scaled_f2, 1, 1), False))
    return layers


def _bn_prefix(conv_name: str) -> str:
    block, layer = conv_name.split(".")
    return f"{block}.bn{layer[len('conv'):]}"


def _n2_layout(spec: N2Spec) -> list[tuple[str, int, int]]:
    sizes = [spec.input_dim, *spec.scaled_hidden]
    layers = [(f"fc{i}", sizes[i - 1], sizes[i]) for i in range(1, 4)]
    layers.append(("out", sizes[3], spec.num_classes))
    return layers


def build_network(spec: NetworkSpec, *, name: str, seed: int) -> Network:
    rng = stream_rng(seed, STREAM_INIT, name)
    params: dict[str, Tensor] = {}
    buffers: dict[str, np.ndarray] = {}
    if isinstance(spec, N1Spec):
        for conv_name, shape, has_bn in _n1_layout(spec):
            fan_in = int(np.prod(shape[1:]))
            params[f"{conv_name}.weight"] = _param(_kaiming_uniform(rng, shape, fan_in), f"{conv_name}.weight")
            if has_bn:
                bn = _bn_prefix(conv_name)
                params[f"{bn}.gamma"] = _param(np.ones(shape[0]), f"{bn}.gamma")
                params[f"{bn}.beta"] = _param(np.zeros(shape[0]), f"{bn}.beta")
                buffers[f"{bn}.running_mean"] = np.zeros(shape[0])
                buffers[f"{bn}.running_var"] = np.ones(shape[0])
            else:
                params[f"{conv_name}.bias"] = _param(np.zeros(shape[0]), f"{conv_name}.bias")
    elif isinstance(spec, N2Spec):
        for layer, fan_in, fan_out in _n2_layout(spec):
            params[f"{layer}.weight"] = _param(_kaiming_uniform(rng, (fan_in, fan_out), fan_in), f"{layer}.weight")
            params[f"{layer}.bias"] = _param(np.zeros(fan_out), f"{layer}.bias")
    else:
        raise ContractError(f"unsupported network spec: {type(spec).__name__}")
    return Network(spec, name=name, params=params, buffers=buffers, seed=seed)


def spec_to_dict(spec: NetworkSpec) -> dict[str, Any]:
    return {"kind": spec.kind, **dataclasses.asdict(spec)}


def spec_from_dict(raw: dict[str, Any]) -> NetworkSpec:
    values = dict(raw)
    kind = values.pop("kind", None)
    if kind == N1Spec.kind:
        values["block_filters"] = tuple(int(v) for v in values["block_filters"])
        return N1Spec(**values)
    if kind == N2Spec.kind:
        values["hidden"] = tuple(int(v) for v in values["hidden"])
        return N2Spec(**values)
    raise ContractError(f"unknown network kind: {kind}")


# --- N1 ------------------------------------------------------------------------


def _norm(net: Network, prefix: str, h: Tensor, training: bool) -> Tensor:
    spec = net.spec
    assert isinstance(spec, N1Spec)
    gamma, beta = net.params[f"{prefix}.gamma"], net.params[f"{prefix}.beta"]
    mean_key, var_key = f"{prefix}.running_mean", f"{prefix}.running_var"
    if not training:
        return ad.batch_norm_inference(h, gamma, beta, net.buffers[mean_key], net.buffers[var_key], eps=spec.bn_eps)
    out, mu, var = ad.batch_norm(h, gamma, beta, eps=spec.bn_eps)
    count = h.shape[1] * h.shape[2]
    unbiased = var * count / (count - 1) if count > 1 else var
    m = spec.bn_momentum
    net.buffers[mean_key] = (1.0 - m) * net.buffers[mean_key] + m * mu
    net.buffers[var_key] = (1.0 - m) * net.buffers[var_key] + m * unbiased
    return out


def _check_view1(net: Network, x: Tensor) -> None:
    spec = net.spec
    if not isinstance(spec, N1Spec):
        raise ContractError(f"{net.name} is not an N1 network")
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] != spec.embedding_dim:
        raise DimensionError(f"N1 expects N×{spec.embedding_dim} input with N ≥ 1, got {x.shape}")


def _n1_trunk(net: Network, x: Tensor, training: bool) -> Tensor:
    spec = net.spec
    assert isinstance(spec, N1Spec)
    n_segments = x.shape[0]
    pad = ((spec.time_kernel - 1) // 2, 1)
    h = ad.reshape(x, (1, n_segments, spec.embedding_dim))
    for b in range(1, 5):
        for conv in (1, 2):
            h = ad.conv2d(h, net.params[f"b{b}.conv{conv}.weight"], stride=(1, 1), pad=pad)
            h = ad.elementwise(HIDDEN_ACTIVATION, _norm(net, f"b{b}.bn{conv}", h, training))
        h = ad.maxpool2d(h, window=(1, 2), stride=(1, 2))
    h = ad.conv2d(h, net.params["f1.conv.weight"])
    h = ad.elementwise(HIDDEN_ACTIVATION, _norm(net, "f1.bn", h, training))
    h = ad.conv2d(h, net.params["f2.conv.weight"])
    return ad.elementwise(HIDDEN_ACTIVATION, _norm(net, "f2.bn", h, training))


def n1_forward(net: Network, x: Tensor | np.ndarray) -> tuple[Tensor, Tensor]:
    x = ad.as_tensor(x)
    _check_view1(net, x)
    spec = net.spec
    n_segments = x.shape[0]
    h = _n1_trunk(net, x, net.training)
    logits = ad.conv2d(h, net.params["c.conv.weight"])
    bias = ad.reshape(net.params["c.conv.bias"], (spec.num_classes, 1, 1))
    segment_out = ad.elementwise(OUTPUT_ACTIVATION, ad.add(logits, bias))
    segment_out = ad.reshape(segment_out, (spec.num_classes, n_segments))
    return segment_out, ad.mean(segment_out, axis=1)


def extract_f2(net: Network, x: Tensor | np.ndarray) -> Tensor:
    x = ad.as_tensor(x)
    _check_view1(net, x)
    spec = net.spec
    h = _n1_trunk(net, x, training=False)
    return ad.mean(ad.reshape(h, (spec.scaled_f2, x.shape[0])), axis=1)


# --- N2 ------------------------------------------------------------------------


def _dropout(net: Network, h: Tensor, p: float) -> Tensor:
    if not net.training or p <= 0.0:
        return h
    keep = (net.dropout_rng.random(h.shape) >= p).astype(np.float64) / (1.0 - p)
    return ad.mul(h, Tensor(keep))


def n2_forward(net: Network, x2: Tensor | np.ndarray) -> Tensor:
    spec = net.spec
    if not isinstance(spec, N2Spec):
        raise ContractError(f"{net.name} is not an N2 network")
    x2 = ad.as_tensor(x2)
    if x2.ndim != 1 or x2.shape[0] != spec.input_dim:
        raise DimensionError(f"N2 expects a length-{spec.input_dim} vector, got {x2.shape}")
    h = ad.reshape(x2, (1, spec.input_dim))
    for i in range(1, 4):
        h = ad.add(ad.matmul(h, net.params[f"fc{i}.weight"]), net.params[f"fc{i}.bias"])
        h = ad.elementwise(HIDDEN_ACTIVATION, h)
        if i < 3:
            h = _dropout(net, h, spec.dropout_p)
    out = ad.add(ad.matmul(h, net.params["out.weight"]), net.params["out.bias"])
    return ad.reshape(ad.elementwise(OUTPUT_ACTIVATION, out), (spec.num_classes,))


# --- dispatch ------------------------------------------------------------------


def required_view(spec: NetworkSpec) -> str:
    if isinstance(spec, N2Spec) and spec.input_view == "view2":
        return "view2"
    return "view1"


def network_input(net: Network, example: TrainingExample) -> np.ndarray:
    spec = net.spec
    if isinstance(spec, N1Spec):
        return example.view1
    if spec.input_view == "view1_mean":
        return example.view1.mean(axis=0)
    if example.view2 is None:
        raise DataError(f"recording {example.id} has no view2 for network {net.name}")
    return example.view2


def recording_output(net: Network, example: TrainingExample) -> Tensor:
    features = network_input(net, example)
    if isinstance(net.spec, N1Spec):
        return n1_forward(net, features)[1]
    return n2_forward(net, features)
