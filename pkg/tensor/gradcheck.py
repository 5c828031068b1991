"""
Central finite-difference gradient checking.

The loss is projected onto a fixed random direction so every output element
contributes; analytic gradients come from backward() on the same graph.
"""
from typing import Callable, Dict, List

import numpy as np

from tensor.core import Tensor, backward


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max|a - n| / max(max|a|, max|n|, 1e-12)."""
    scale = max(float(np.abs(analytic).max(initial=0.0)), float(np.abs(numeric).max(initial=0.0)), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0)) / scale


def numerical_gradient(loss_fn: Callable[[], float], target: Tensor, eps: float = 1e-5) -> np.ndarray:
    target.data = np.ascontiguousarray(target.data)
    grad = np.zeros_like(target.data)
    flat = target.data.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + eps
        plus = loss_fn()
        flat[i] = original - eps
        minus = loss_fn()
        flat[i] = original
        out[i] = (plus - minus) / (2.0 * eps)
    return grad


def check_gradients(
    forward: Callable[[], Tensor],
    inputs: Dict[str, Tensor],
    rng: np.random.Generator,
    eps: float = 1e-5,
) -> Dict[str, float]:
    """
    Compare analytic and numeric gradients of sum(forward() * R) for a random R.

    Returns the relative error for each named input. Inputs must be float64
    tensors with requires_grad=True; forward() must rebuild the graph on each
    call.
    """
    probe = forward()
    direction = rng.standard_normal(probe.shape).astype(probe.dtype)

    def projected() -> Tensor:
        out = forward()
        return (out * Tensor(direction, dtype=out.dtype)).sum() if out.data.size > 1 else out

    loss = projected()
    backward(loss)
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data)) for name, t in inputs.items()}

    def value() -> float:
        return float(projected().data)

    errors: Dict[str, float] = {}
    for name, t in inputs.items():
        numeric = numerical_gradient(value, t, eps=eps)
        errors[name] = relative_error(analytic[name], numeric)
    return errors


def worst(errors: List[Dict[str, float]]) -> float:
    return max((max(e.values()) for e in errors if e), default=0.0)
