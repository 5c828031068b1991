"""
The dynamic instance domain adaptation module.

    x ──► conv1 (c → c/m) ─────────────────────────────► F
    x ──► GAP ─► conv1 ─► swap(C,W) ─► convK ─► swap ─► reshape ─► bank_d   (one per dilation d)
    O_d = bank_d ⊗ F   (per-sample depthwise, dilation d)
    residual = concat_d conv4(O_d)

conv4 is shared by the branches. The module holds no normalisation, so the
residual of sample n depends on x[n] alone.
"""
import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from dida.config import DidaConfig
from errors import ShapeError
from tensor import ops
from tensor.core import Parameter, Tensor
from tensor.nn import Conv2d, Module, ModuleList, kaiming_uniform
from tensor.profile import record_macs

GENERATOR_INIT_SCALE = 0.1


@dataclass
class DynamicKernels:
    """Per-sample depthwise kernel bank [N, c/m, k, k] for one branch."""
    bank: Tensor
    dilation: int
    kernel_size: int

    @property
    def padding(self) -> int:
        return self.dilation * (self.kernel_size - 1) // 2


def reduce_channels(x: Tensor, conv1: Conv2d) -> Tensor:
    """F = conv1(x): 1x1 bias-free reduction c → c/m."""
    return conv1(x)


def generate_kernels(
    x: Tensor,
    conv1: Conv2d,
    conv_k: Conv2d,
    dilation: int = 1,
    pooled_reduced: Optional[Tensor] = None,
) -> DynamicKernels:
    """
    GAP → conv1 → swap(C, W) → convK (1 → k²) → swap back → reshape to [N, c/m, k, k].

    pooled_reduced lets callers reuse conv1(GAP(x)) across branches that share conv1.
    """
    if pooled_reduced is None:
        pooled_reduced = conv1(ops.global_avg_pool(x))
    n, reduced = pooled_reduced.shape[0], pooled_reduced.shape[1]
    k = math.isqrt(conv_k.out_channels)
    swapped = ops.swap_axes(pooled_reduced, 1, 3)          # [N, 1, 1, c/m]
    expanded = conv_k(swapped)                              # [N, k*k, 1, c/m]
    restored = ops.swap_axes(expanded, 1, 3)                # [N, c/m, 1, k*k]
    bank = ops.reshape(restored, (n, reduced, k, k))
    return DynamicKernels(bank=bank, dilation=dilation, kernel_size=k)


def fuse(static_out: Tensor, residual: Tensor) -> Tensor:
    """Z = static branch + dynamic residual."""
    if static_out.shape != residual.shape:
        raise ShapeError(f"fuse: static shape {static_out.shape} does not match residual shape {residual.shape}")
    return ops.add(static_out, residual)


class KernelGenerator(Conv2d):
    """convK: a 1x1 bias-free conv from one channel to k² channels, applied after the dimension swap."""

    def __init__(self, kernel_size: int, rng: np.random.Generator):
        super().__init__(1, kernel_size * kernel_size, 1, rng, bias=False, init_scale=GENERATOR_INIT_SCALE)


class StaticKernel(Module):
    """Learned depthwise kernel shared by every sample; stands in for a generator in the static-CNN ablation."""

    def __init__(self, channels: int, kernel_size: int, rng: np.random.Generator):
        super().__init__()
        self.kernel_size_out = kernel_size
        shape = (channels, kernel_size, kernel_size)
        self.weight = Parameter(kaiming_uniform(shape, kernel_size * kernel_size, rng, scale=GENERATOR_INIT_SCALE))

    def forward(self, batch: int) -> Tensor:
        c, k, _ = self.weight.shape
        return ops.broadcast_to(ops.reshape(self.weight, (1, c, k, k)), (batch, c, k, k))


class DidaModule(Module):
    def __init__(self, config: DidaConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        c, r = config.in_channels, config.reduced_channels
        self.conv1 = Conv2d(c, r, 1, rng, bias=False)
        if not config.share_reduction and config.generator_mode == "dynamic":
            self.gen_reductions = ModuleList([Conv2d(c, r, 1, rng, bias=False) for _ in config.dilations])
        if config.generator_mode == "dynamic":
            self.generators = ModuleList([KernelGenerator(k, rng) for k in config.kernel_sizes])
        else:
            self.static_kernels = ModuleList([StaticKernel(r, k, rng) for k in config.kernel_sizes])
        self.conv4 = Conv2d(r, config.branch_out_channels, 1, rng, bias=False, init="zeros")

    @property
    def branch_count(self) -> int:
        return len(self.config.dilations)

    def branch_kernels(self, x: Tensor) -> List[DynamicKernels]:
        """Kernel banks for every branch, generated from x (or broadcast static kernels)."""
        cfg = self.config
        if cfg.generator_mode == "static_cnn":
            return [
                DynamicKernels(bank=kernel(x.shape[0]), dilation=d, kernel_size=kernel.kernel_size_out)
                for kernel, d in zip(self.static_kernels, cfg.dilations)
            ]
        pooled = ops.global_avg_pool(x)
        shared = self.conv1(pooled) if cfg.share_reduction else None
        banks = []
        for i, (generator, d) in enumerate(zip(self.generators, cfg.dilations)):
            reduction = self.conv1 if cfg.share_reduction else self.gen_reductions[i]
            pooled_reduced = shared if cfg.share_reduction else reduction(pooled)
            banks.append(generate_kernels(x, reduction, generator, dilation=d, pooled_reduced=pooled_reduced))
        return banks

    def residual(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ShapeError(f"dida: input shape {x.shape} does not have {self.config.in_channels} channels")
        features = reduce_channels(x, self.conv1)
        n, r, h, w = features.shape
        outputs = []
        for kernels in self.branch_kernels(x):
            mixed = ops.depthwise_conv2d_per_sample(features, kernels.bank, padding=kernels.padding, dilation=kernels.dilation)
            record_macs(f"{self.scope}.dynamic_conv", n * r * mixed.shape[2] * mixed.shape[3] * kernels.kernel_size ** 2, mixed.shape)
            outputs.append(self.conv4(mixed))
        return ops.concat(outputs, axis=1)

    def forward(self, x: Tensor) -> Tensor:
        return self.residual(x)


def dida_residual(x: Tensor, module: DidaModule) -> Tensor:
    """Dynamic residual for x; dispatches on the module's generator mode."""
    return module.residual(x)


def static_cnn_variant(x: Tensor, module: DidaModule) -> Tensor:
    if module.config.generator_mode != "static_cnn":
        raise ShapeError("static_cnn_variant needs a module built with generator_mode='static_cnn'")
    return module.residual(x)


def closed_form_param_count(config: DidaConfig) -> int:
    """Weight count of a DIDA module without instantiating it."""
    c, r = config.in_channels, config.reduced_channels
    unshared = not config.share_reduction and config.generator_mode == "dynamic"
    reductions = c * r * (1 + len(config.dilations) if unshared else 1)
    if config.generator_mode == "dynamic":
        kernels = sum(k * k for k in config.kernel_sizes)
    else:
        kernels = sum(r * k * k for k in config.kernel_sizes)
    increase = r * config.branch_out_channels
    return reductions + kernels + increase
