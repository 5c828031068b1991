"""
MixStyle: mixes per-sample channel statistics between instances during training.

x_hat = (lam*sig_i + (1-lam)*sig_j) * (x_i - mu_i) / sig_i + (lam*mu_i + (1-lam)*mu_j)

The statistics are treated as constants in the backward pass.
"""
from typing import Optional

import numpy as np

from tensor.core import Tensor, accumulate_grad, make_node
from tensor.nn import Module

SIGMA_FLOOR = 1e-6


def mixstyle(x: Tensor, lam: np.ndarray, partner: np.ndarray, eps: float = SIGMA_FLOOR) -> Tensor:
    """Apply the statistics mix for given per-sample lam [N] and partner indices [N]."""
    data = x.data
    mu = data.mean(axis=(2, 3), keepdims=True)
    sigma = np.maximum(data.std(axis=(2, 3), keepdims=True), eps)
    lam = np.asarray(lam, dtype=x.dtype).reshape(-1, 1, 1, 1)
    partner = np.asarray(partner, dtype=np.int64)
    sigma_mix = lam * sigma + (1.0 - lam) * sigma[partner]
    mu_mix = lam * mu + (1.0 - lam) * mu[partner]
    scale = (sigma_mix / sigma).astype(x.dtype)
    out = ((data - mu) * scale + mu_mix).astype(x.dtype)

    def backward_fn(g):
        accumulate_grad(x, g * scale)

    return make_node(out, (x,), backward_fn, "mixstyle")


class MixStyle(Module):
    def __init__(self, rng: np.random.Generator, apply_prob: float = 0.5, alpha: float = 0.1, eps: float = SIGMA_FLOOR):
        super().__init__()
        self.rng = rng
        self.apply_prob = apply_prob
        self.alpha = alpha
        self.eps = eps

    def forward(self, x: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
        if not self.training:
            return x
        rng = rng or self.rng
        if rng.random() > self.apply_prob:
            return x
        n = x.shape[0]
        lam = rng.beta(self.alpha, self.alpha, size=n)
        partner = rng.permutation(n)
        return mixstyle(x, lam, partner, eps=self.eps)
