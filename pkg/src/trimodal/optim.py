"""Adam optimizer with bias correction, plus global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from .autodiff import Tensor
from .errors import ContractError, ValidationError


@dataclass
class AdamState:
    """Per-parameter first/second moments keyed by parameter name."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)

    def moments_for(self, name: str, like: np.ndarray):
        m = self.first_moment.get(name)
        if m is None:
            m = np.zeros_like(like)
            v = np.zeros_like(like)
            self.first_moment[name] = m
            self.second_moment[name] = v
            return m, v
        v = self.second_moment[name]
        if m.shape != like.shape:
            raise ContractError(f"Adam moment shape {m.shape} mismatches parameter {name} {like.shape}")
        return m, v


def adam_step(params: Mapping[str, Tensor], state: AdamState) -> None:
    """One bias-corrected Adam update over named parameters, in place.

    Rejects the whole step if any gradient is non-finite, naming the
    offending parameter; parameters are untouched in that case.
    """
    for name, p in params.items():
        g = p.grad
        if g is None:
            raise ValidationError(f"parameter {name} has no gradient; run backward first")
        if not np.all(np.isfinite(g)):
            raise ValidationError(f"non-finite gradient for parameter {name}; step aborted")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** t
    bias2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = p.grad
        m, v = state.moments_for(name, p.data)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = (m / bias1) / (np.sqrt(v / bias2) + state.epsilon)
        p.data -= state.learning_rate * update.astype(p.data.dtype, copy=False)
        if not np.all(np.isfinite(p.data)):
            raise ContractError(f"parameter {name} became non-finite after Adam update")


def clip_global_norm(params: Mapping[str, Tensor], max_norm: float) -> float:
    """Scale all grads so their joint L2 norm is at most max_norm; returns the pre-clip norm."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return norm
