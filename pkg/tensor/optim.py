"""
Optimizers and learning-rate schedules.

The step functions operate on an explicit OptimizerState so the full training
state can be inspected and persisted; Optimizer is a thin convenience wrapper.
"""
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from errors import ConfigError, GradientError
from tensor.core import Parameter


@dataclass
class OptimizerState:
    kind: str
    base_lr: float
    step: int = 0
    lr_multipliers: Dict[str, float] = field(default_factory=dict)
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    velocity: Dict[str, np.ndarray] = field(default_factory=dict)

    def multiplier(self, name: str) -> float:
        return self.lr_multipliers.get(name, 1.0)


def _require_grads(params: List[Parameter]) -> None:
    missing = [p.name or repr(p) for p in params if p.grad is None]
    if missing:
        raise GradientError(f"no gradient for registered parameter(s): {', '.join(missing[:5])}")


def sgd_momentum_step(
    state: OptimizerState,
    params: List[Parameter],
    lr: float,
    momentum: float = 0.9,
    weight_decay: float = 0.0,
) -> None:
    """v = momentum * v + (g + wd * p); p -= lr * multiplier * v."""
    _require_grads(params)
    for p in params:
        g = p.grad
        if weight_decay:
            g = g + weight_decay * p.data
        v = state.velocity.get(p.name)
        v = g.copy() if v is None else momentum * v + g
        state.velocity[p.name] = v
        p.data = p.data - (lr * state.multiplier(p.name)) * v
    state.step += 1


def adam_step(
    state: OptimizerState,
    params: List[Parameter],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Adam with bias correction; the step counter is shared by all parameters."""
    _require_grads(params)
    t = state.step + 1
    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t
    for p in params:
        g = p.grad
        m = state.first_moment.get(p.name)
        v = state.second_moment.get(p.name)
        m = (1.0 - beta1) * g if m is None else beta1 * m + (1.0 - beta1) * g
        v = (1.0 - beta2) * g * g if v is None else beta2 * v + (1.0 - beta2) * g * g
        state.first_moment[p.name] = m
        state.second_moment[p.name] = v
        m_hat = m / correction1
        v_hat = v / correction2
        update = (lr * state.multiplier(p.name)) * m_hat / (np.sqrt(v_hat) + eps)
        p.data = (p.data - update).astype(p.data.dtype)
    state.step = t


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    """0.5 * lr0 * (1 + cos(pi * step / total_steps)), floored at 0."""
    if total_steps <= 0:
        raise ConfigError(f"cosine_lr: total_steps must be positive, got {total_steps}")
    if step < 0 or step > total_steps:
        raise ConfigError(f"cosine_lr: step {step} outside [0, {total_steps}]")
    return max(0.0, 0.5 * lr0 * (1.0 + math.cos(math.pi * step / total_steps)))


class Optimizer:
    """Binds parameters, per-parameter LR multipliers and a step function."""

    def __init__(
        self,
        kind: str,
        params: List[Parameter],
        base_lr: float,
        lr_multiplier: Optional[Callable[[str], float]] = None,
        momentum: float = 0.9,
        weight_decay: float = 0.0,
        betas: tuple = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        if kind not in ("adam", "sgd_momentum"):
            raise ConfigError(f"unknown optimizer {kind!r}")
        names = [p.name for p in params]
        if len(set(names)) != len(names) or not all(names):
            raise ConfigError("optimizer parameters must carry unique, non-empty names")
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        multipliers = {}
        if lr_multiplier is not None:
            multipliers = {p.name: float(lr_multiplier(p.name)) for p in params}
        self.state = OptimizerState(kind=kind, base_lr=base_lr, lr_multipliers=multipliers)

    def effective_lr(self, name: str, lr: float) -> float:
        return lr * self.state.multiplier(name)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float) -> None:
        if self.state.kind == "adam":
            adam_step(self.state, self.params, lr, beta1=self.betas[0], beta2=self.betas[1], eps=self.eps)
        else:
            sgd_momentum_step(self.state, self.params, lr, momentum=self.momentum, weight_decay=self.weight_decay)
