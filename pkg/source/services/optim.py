from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from core.autodiff import Tensor
from core.errors import ContractError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
LEARNING_RATE_GRID = (1e-4, 3e-4, 1e-3)


@dataclass
class AdamState:
    lr: float = LEARNING_RATE_GRID[-1]
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict[str, Tensor], lr: float) -> "AdamState":
        return cls(
            lr=float(lr),
            m={name: np.zeros_like(p.data) for name, p in params.items()},
            v={name: np.zeros_like(p.data) for name, p in params.items()},
        )


def adam_step(state: AdamState, params: dict[str, Tensor]) -> None:
    for name, param in params.items():
        if name not in state.m:
            raise ContractError(f"optimizer state has no moments for parameter {name}")
        if state.m[name].shape != param.data.shape:
            raise ContractError(f"parameter {name} has shape {param.shape}, moments {state.m[name].shape}")
        if param.grad is not None and param.grad.shape != param.data.shape:
            raise ContractError(f"gradient for {name} has shape {param.grad.shape}, expected {param.shape}")

    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for name, param in params.items():
        g = param.grad if param.grad is not None else np.zeros_like(param.data)
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        param.data = param.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        param.grad = None
