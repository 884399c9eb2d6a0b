from __future__ import annotations

from itertools import combinations
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DimensionError
from .models import LossBreakdown, pair_count

CLAMP_EPS = 1e-7

Divergence = Callable[[Tensor, Tensor], Tensor]


def _check_lengths(op: str, a: Tensor, b: Tensor) -> None:
    if a.ndim != 1 or a.shape != b.shape:
        raise DimensionError(f"{op}: length mismatch {a.shape} vs {b.shape}")


def bce_multilabel(p: Tensor, y: Tensor | np.ndarray) -> Tensor:
    y = ad.as_tensor(y)
    _check_lengths("bce_multilabel", p, y)
    p = ad.clamp(p, CLAMP_EPS, 1.0 - CLAMP_EPS)
    positive = ad.mul(y, ad.log(p))
    negative = ad.mul(1.0 - y, ad.log(1.0 - p))
    return ad.scalar_mul(ad.mean(ad.add(positive, negative)), -1.0)


def sym_gkl(o1: Tensor, o2: Tensor) -> Tensor:
    _check_lengths("sym_gkl", o1, o2)
    a = ad.clamp(o1, CLAMP_EPS)
    b = ad.clamp(o2, CLAMP_EPS)
    return ad.sum_(ad.mul(ad.sub(a, b), ad.sub(ad.log(a), ad.log(b))))


def generalized_kl(x: np.ndarray, y: np.ndarray) -> float:
    """Σ x·log(x/y) − Σ x + Σ y; defined for positive vectors that need not sum to one."""
    x = np.clip(np.asarray(x, dtype=np.float64), CLAMP_EPS, None)
    y = np.clip(np.asarray(y, dtype=np.float64), CLAMP_EPS, None)
    return float(np.sum(x * np.log(x / y)) - np.sum(x) + np.sum(y))


DIVERGENCES: dict[str, Divergence] = {"sym_gkl": sym_gkl}


def get_divergence(name: str) -> Divergence:
    try:
        return DIVERGENCES[name]
    except KeyError as exc:
        raise ContractError(f"unknown divergence: {name}") from exc


def network_pairs(k: int) -> list[tuple[int, int]]:
    return list(combinations(range(k), 2))


def combined_loss(
    outs: Sequence[Tensor],
    y: Tensor | np.ndarray,
    alphas: Sequence[float],
    divergence: Divergence = sym_gkl,
) -> tuple[Tensor, LossBreakdown]:
    if not outs:
        raise ContractError("combined_loss needs at least one network output")
    pairs = network_pairs(len(outs))
    if len(alphas) != len(pairs):
        raise ContractError(f"{len(outs)} networks need {len(pairs)} divergence weights, got {len(alphas)}")
    if any(a < 0 for a in alphas):
        raise ContractError(f"divergence weights must be non-negative, got {list(alphas)}")
    y = ad.as_tensor(y)

    bces = [bce_multilabel(out, y) for out in outs]
    total = bces[0]
    for term in bces[1:]:
        total = ad.add(total, term)
    divs: list[Tensor] = []
    for alpha, (i, j) in zip(alphas, pairs):
        div = divergence(outs[i], outs[j])
        divs.append(div)
        total = ad.add(total, ad.scalar_mul(div, alpha))

    breakdown = LossBreakdown(
        per_network_bce=tuple(b.item() for b in bces),
        per_pair_divergence=tuple(d.item() for d in divs),
        alphas=tuple(float(a) for a in alphas),
        total=total.item(),
    )
    return total, breakdown


def weblynet_loss(
    outs: Sequence[Tensor],
    y: Tensor | np.ndarray,
    alphas: Sequence[float],
    divergence: Divergence = sym_gkl,
) -> tuple[Tensor, LossBreakdown]:
    if len(outs) < 2:
        raise ContractError(f"co-teaching needs K ≥ 2 networks, got {len(outs)}")
    if len(alphas) != pair_count(len(outs)):
        raise ContractError(f"K={len(outs)} needs {pair_count(len(outs))} divergence weights, got {len(alphas)}")
    return combined_loss(outs, y, alphas, divergence)
