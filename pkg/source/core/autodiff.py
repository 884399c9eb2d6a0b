from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError

_GRAD_MODE = threading.local()

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


def is_grad_enabled() -> bool:
    return getattr(_GRAD_MODE, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    previous = is_grad_enabled()
    _GRAD_MODE.enabled = False
    try:
        yield
    finally:
        _GRAD_MODE.enabled = previous


@dataclass(eq=False)
class Node:
    op: str
    parents: tuple["Tensor", ...]
    backward: BackwardFn


class Tensor:
    __slots__ = ("data", "grad", "node", "requires_grad", "name")

    def __init__(self, data, *, requires_grad: bool = False, name: str = ""):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.node: Node | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return int(self.data.ndim)

    @property
    def tracks_grad(self) -> bool:
        return self.requires_grad or self.node is not None

    def detach(self) -> "Tensor":
        return Tensor(self.data, name=self.name)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def __add__(self, other: "Tensor | float") -> "Tensor":
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, float(other))

    __radd__ = __add__

    def __sub__(self, other: "Tensor | float") -> "Tensor":
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -float(other))

    def __rsub__(self, other: float) -> "Tensor":
        return add_scalar(scalar_mul(self, -1.0), float(other))

    def __mul__(self, other: "Tensor | float") -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, other)
        return scalar_mul(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return scalar_mul(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(data: np.ndarray, op: str, parents: tuple[Tensor, ...], fn: BackwardFn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=np.float64)
    out.grad = None
    out.node = None
    out.requires_grad = False
    out.name = ""
    if is_grad_enabled() and any(p.tracks_grad for p in parents):
        out.node = Node(op=op, parents=parents, backward=fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return tuple(np.broadcast_shapes(a.shape, b.shape))
    except ValueError as exc:
        raise DimensionError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from exc


# --- graph -----------------------------------------------------------------


class Graph:
    def __init__(self, output: Tensor, order: list[Tensor]):
        self.output = output
        self._order = order

    @property
    def records(self) -> list[Node]:
        return [t.node for t in self._order if t.node is not None]

    @classmethod
    def trace(cls, output: Tensor) -> "Graph":
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(output, False)]
        while stack:
            tensor, expanded = stack.pop()
            if expanded:
                order.append(tensor)
                continue
            if id(tensor) in visited or tensor.node is None:
                continue
            visited.add(id(tensor))
            stack.append((tensor, True))
            for parent in reversed(tensor.node.parents):
                if parent.node is not None and id(parent) not in visited:
                    stack.append((parent, False))
        return cls(output, order)

    def run_backward(self, seed: np.ndarray) -> None:
        pending: dict[int, np.ndarray] = {id(self.output): seed}
        for tensor in reversed(self._order):
            grad = pending.pop(id(tensor), None)
            if grad is None:
                continue
            node = tensor.node
            assert node is not None
            parent_grads = node.backward(grad)
            for parent, parent_grad in zip(node.parents, parent_grads):
                if parent_grad is None or not parent.tracks_grad:
                    continue
                if parent.node is None:
                    parent.grad = parent_grad.copy() if parent.grad is None else parent.grad + parent_grad
                else:
                    key = id(parent)
                    pending[key] = parent_grad if key not in pending else pending[key] + parent_grad


def backward(loss: Tensor) -> None:
    if loss.data.shape != ():
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.node is None:
        if loss.requires_grad:
            loss.grad = np.ones((), dtype=np.float64) if loss.grad is None else loss.grad + 1.0
            return
        raise ContractError("backward called on a tensor that is not attached to a graph")
    Graph.trace(loss).run_backward(np.ones((), dtype=np.float64))


# --- binary elementwise ------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("add", a, b)

    def fn(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, "add", (a, b), fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("sub", a, b)

    def fn(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, "sub", (a, b), fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("mul", a, b)
    a_data, b_data = a.data, b.data

    def fn(g: np.ndarray):
        return _unbroadcast(g * b_data, a.shape), _unbroadcast(g * a_data, b.shape)

    return _result(a_data * b_data, "mul", (a, b), fn)


def scalar_mul(x: Tensor, scalar: float) -> Tensor:
    s = float(scalar)

    def fn(g: np.ndarray):
        return (g * s,)

    return _result(x.data * s, "scalar_mul", (x,), fn)


def add_scalar(x: Tensor, scalar: float) -> Tensor:
    s = float(scalar)

    def fn(g: np.ndarray):
        return (g,)

    return _result(x.data + s, "add_scalar", (x,), fn)


# --- unary elementwise -------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def fn(g: np.ndarray):
        return (g * mask,)

    return _result(np.where(mask, x.data, 0.0), "relu", (x,), fn)


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x: Tensor) -> Tensor:
    s = _stable_sigmoid(x.data)

    def fn(g: np.ndarray):
        return (g * s * (1.0 - s),)

    return _result(s, "sigmoid", (x,), fn)


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise ContractError("log needs strictly positive input; clamp first")
    x_data = x.data

    def fn(g: np.ndarray):
        return (g / x_data,)

    return _result(np.log(x_data), "log", (x,), fn)


def clamp(x: Tensor, low: float | None = None, high: float | None = None) -> Tensor:
    lo = -np.inf if low is None else float(low)
    hi = np.inf if high is None else float(high)
    inside = (x.data >= lo) & (x.data <= hi)

    def fn(g: np.ndarray):
        return (g * inside,)

    return _result(np.clip(x.data, lo, hi), "clamp", (x,), fn)


_UNARY = {"relu": relu, "sigmoid": sigmoid, "log": log}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(kind: str, x: Tensor, other: "Tensor | float | None" = None) -> Tensor:
    if kind in _UNARY:
        return _UNARY[kind](x)
    if kind in _BINARY:
        if not isinstance(other, Tensor):
            raise ContractError(f"{kind} needs a second tensor operand")
        return _BINARY[kind](x, other)
    if kind == "scalar_mul":
        if other is None or isinstance(other, Tensor):
            raise ContractError("scalar_mul needs a float operand")
        return scalar_mul(x, float(other))
    raise ContractError(f"unknown elementwise kind: {kind}")


# --- reductions and shape ------------------------------------------------------


def sum_(x: Tensor, axis: int | tuple[int, ...] | None = None) -> Tensor:
    shape = x.shape

    def fn(g: np.ndarray):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _result(x.data.sum(axis=axis), "sum", (x,), fn)


def mean(x: Tensor, axis: int | tuple[int, ...] | None = None) -> Tensor:
    count = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    shape = x.shape

    def fn(g: np.ndarray):
        grown = g if axis is None else np.expand_dims(g, axis)
        return (np.broadcast_to(grown / count, shape).copy(),)

    return _result(x.data.mean(axis=axis), "mean", (x,), fn)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    source = x.shape
    try:
        data = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {source} to {shape}") from exc

    def fn(g: np.ndarray):
        return (g.reshape(source),)

    return _result(data, "reshape", (x,), fn)


# --- linear algebra and layers -----------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    a_data, b_data = a.data, b.data

    def fn(g: np.ndarray):
        return g @ b_data.T, a_data.T @ g

    return _result(a_data @ b_data, "matmul", (a, b), fn)


def conv2d(
    x: Tensor,
    filters: Tensor,
    stride: tuple[int, int] = (1, 1),
    pad: tuple[int, int] = (0, 0),
) -> Tensor:
    if x.ndim != 3 or filters.ndim != 4:
        raise DimensionError(f"conv2d: expected 3-d input and 4-d filters, got {x.shape} and {filters.shape}")
    c_in, h, w = x.shape
    c_out, f_in, kh, kw = filters.shape
    if f_in != c_in:
        raise DimensionError(f"conv2d: input has {c_in} channels, filters expect {f_in}")
    sh, sw = int(stride[0]), int(stride[1])
    ph, pw = int(pad[0]), int(pad[1])
    if sh < 1 or sw < 1 or ph < 0 or pw < 0:
        raise ContractError(f"conv2d: invalid stride {stride} or pad {pad}")
    if kh > h + 2 * ph or kw > w + 2 * pw:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {h + 2 * ph}x{w + 2 * pw}")

    padded = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw)))
    h_out = (h + 2 * ph - kh) // sh + 1
    w_out = (w + 2 * pw - kw) // sw + 1
    windows = sliding_window_view(padded, (kh, kw), axis=(1, 2))[:, ::sh, ::sw]
    weights = filters.data
    out = np.tensordot(weights, windows, axes=([1, 2, 3], [0, 3, 4]))

    def fn(g: np.ndarray):
        grad_w = np.tensordot(g, windows, axes=([1, 2], [1, 2])) if filters.tracks_grad else None
        grad_x = None
        if x.tracks_grad:
            grad_padded = np.zeros_like(padded)
            for i in range(kh):
                for j in range(kw):
                    grad_padded[:, i : i + sh * (h_out - 1) + 1 : sh, j : j + sw * (w_out - 1) + 1 : sw] += (
                        np.tensordot(weights[:, :, i, j], g, axes=([0], [0]))
                    )
            grad_x = grad_padded[:, ph : ph + h, pw : pw + w]
        return grad_x, grad_w

    return _result(out, "conv2d", (x, filters), fn)


def maxpool2d(x: Tensor, window: tuple[int, int] = (1, 2), stride: tuple[int, int] = (1, 2)) -> Tensor:
    """Non-overlapping max pooling; gradient goes to the lowest index of each window's maximum."""
    if tuple(window) != tuple(stride):
        raise ContractError(f"maxpool2d supports stride equal to window only, got {window} and {stride}")
    if x.ndim != 3:
        raise DimensionError(f"maxpool2d: expected 3-d input, got {x.shape}")
    c, h, w = x.shape
    kh, kw = int(window[0]), int(window[1])
    if h % kh or w % kw:
        raise DimensionError(f"maxpool2d: input {h}x{w} not divisible by window {kh}x{kw}")
    ho, wo = h // kh, w // kw
    blocks = x.data.reshape(c, ho, kh, wo, kw).transpose(0, 1, 3, 2, 4).reshape(c, ho, wo, kh * kw)
    winner = blocks.argmax(axis=-1)[..., None]
    out = np.take_along_axis(blocks, winner, axis=-1)[..., 0]

    def fn(g: np.ndarray):
        routed = np.zeros_like(blocks)
        np.put_along_axis(routed, winner, g[..., None], axis=-1)
        return (routed.reshape(c, ho, wo, kh, kw).transpose(0, 1, 3, 2, 4).reshape(c, h, w),)

    return _result(out, "maxpool2d", (x,), fn)


def batch_norm(
    x: Tensor, gamma: Tensor, beta: Tensor, *, eps: float = 1e-5
) -> tuple[Tensor, np.ndarray, np.ndarray]:
    if x.ndim != 3 or gamma.shape != (x.shape[0],) or beta.shape != (x.shape[0],):
        raise DimensionError(f"batch_norm: input {x.shape} with affine {gamma.shape}/{beta.shape}")
    axes = (1, 2)
    count = x.shape[1] * x.shape[2]
    mu = x.data.mean(axis=axes)
    var = x.data.var(axis=axes)
    inv = 1.0 / np.sqrt(var + eps)
    x_hat = (x.data - mu[:, None, None]) * inv[:, None, None]
    g_data = gamma.data

    def fn(g: np.ndarray):
        grad_gamma = (g * x_hat).sum(axis=axes)
        grad_beta = g.sum(axis=axes)
        d_hat = g * g_data[:, None, None]
        grad_x = (inv[:, None, None] / count) * (
            count * d_hat
            - d_hat.sum(axis=axes)[:, None, None]
            - x_hat * (d_hat * x_hat).sum(axis=axes)[:, None, None]
        )
        return grad_x, grad_gamma, grad_beta

    out = g_data[:, None, None] * x_hat + beta.data[:, None, None]
    return _result(out, "batch_norm", (x, gamma, beta), fn), mu, var


def batch_norm_inference(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    *,
    eps: float = 1e-5,
) -> Tensor:
    if x.ndim != 3 or gamma.shape != (x.shape[0],):
        raise DimensionError(f"batch_norm: input {x.shape} with affine {gamma.shape}")
    inv = 1.0 / np.sqrt(np.asarray(running_var) + eps)
    centered = (x.data - np.asarray(running_mean)[:, None, None]) * inv[:, None, None]
    g_data = gamma.data

    def fn(g: np.ndarray):
        return (
            g * (g_data * inv)[:, None, None],
            (g * centered).sum(axis=(1, 2)),
            g.sum(axis=(1, 2)),
        )

    out = g_data[:, None, None] * centered + beta.data[:, None, None]
    return _result(out, "batch_norm_inference", (x, gamma, beta), fn)
