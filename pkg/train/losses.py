"""
Source cross-entropy, pseudo-labelling and the confidence-masked target loss.

    L_s = mean_i CE(f(x_i^s), y_i)
    L_t = (1/B) sum_i w_i CE(f(A_strong(x_i^t)), argmax q_i)
    w_i = 1[max q_i >= tau]   (hard_threshold)   or   max q_i   (soft_weight)
"""
from typing import Tuple

import numpy as np

from errors import ConfigError
from tensor.core import Tensor
from tensor.ops import softmax_cross_entropy, softmax_np


def loss_source(logits: Tensor, labels: np.ndarray) -> Tensor:
    return softmax_cross_entropy(logits, labels)


def pseudo_label(weak_logits: Tensor) -> Tuple[np.ndarray, np.ndarray]:
    """(argmax class, max probability) of the weak view; no graph is recorded."""
    probs = softmax_np(np.asarray(weak_logits.data))
    # np.argmax returns the first maximum, i.e. the lowest class index on ties.
    labels = np.argmax(probs, axis=1).astype(np.int64)
    confidence = probs[np.arange(len(labels)), labels]
    return labels, confidence


def target_weights(confidence: np.ndarray, tau: float, mode: str) -> np.ndarray:
    if mode == "hard_threshold":
        return (confidence >= tau).astype(np.float64)
    if mode == "soft_weight":
        return np.asarray(confidence, dtype=np.float64)
    if mode == "none":
        return np.zeros_like(confidence, dtype=np.float64)
    raise ConfigError(f"unknown target loss mode {mode!r}")


def accepted(confidence: np.ndarray, tau: float) -> np.ndarray:
    return confidence >= tau


def loss_target(
    strong_logits: Tensor,
    labels: np.ndarray,
    confidence: np.ndarray,
    tau: float,
    mode: str = "hard_threshold",
) -> Tensor:
    weights = target_weights(confidence, tau, mode) / max(len(labels), 1)
    return softmax_cross_entropy(strong_logits, labels, weights=weights)
