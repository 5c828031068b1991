"""
Finite-difference suite over every differentiable operator, in double precision.

Each case builds fresh float64 inputs from a seeded generator and returns the
relative error per input; a case passes when every error is within tolerance
for every seed.
"""
import logging
import time
from typing import Callable, Dict, List

import numpy as np

from dida.config import DidaConfig
from dida.module import DidaModule, generate_kernels
from errors import ConfigError, GradientError
from tensor import ops
from tensor.core import Tensor, default_dtype
from tensor.gradcheck import check_gradients

logger = logging.getLogger(__name__)

TOLERANCE = 1e-6
DEFAULT_SEEDS = 20


def _leaf(rng: np.random.Generator, *shape: int) -> Tensor:
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _away_from_zero(rng: np.random.Generator, *shape: int) -> Tensor:
    values = rng.standard_normal(shape)
    return Tensor(values + 0.1 * np.sign(values), requires_grad=True)


def case_conv2d(rng):
    x, w, b = _leaf(rng, 2, 3, 5, 5), _leaf(rng, 4, 3, 3, 3), _leaf(rng, 4)
    return check_gradients(lambda: ops.conv2d(x, w, padding=1, bias=b), {"x": x, "w": w, "b": b}, rng)


def case_conv2d_strided_dilated(rng):
    x, w = _leaf(rng, 2, 2, 7, 7), _leaf(rng, 3, 2, 3, 3)
    return check_gradients(lambda: ops.conv2d(x, w, stride=2, padding=2, dilation=2), {"x": x, "w": w}, rng)


def case_depthwise(rng):
    x, k = _leaf(rng, 2, 3, 5, 5), _leaf(rng, 2, 3, 3, 3)
    return check_gradients(lambda: ops.depthwise_conv2d_per_sample(x, k, padding=1, dilation=1), {"x": x, "k": k}, rng)


def case_depthwise_dilated(rng):
    x, k = _leaf(rng, 2, 3, 6, 6), _leaf(rng, 2, 3, 3, 3)
    return check_gradients(lambda: ops.depthwise_conv2d_per_sample(x, k, padding=2, dilation=2), {"x": x, "k": k}, rng)


def case_linear(rng):
    x, w, b = _leaf(rng, 3, 5), _leaf(rng, 4, 5), _leaf(rng, 4)
    return check_gradients(lambda: ops.linear(x, w, b), {"x": x, "w": w, "b": b}, rng)


def case_relu(rng):
    x = _away_from_zero(rng, 2, 3, 4, 4)
    return check_gradients(lambda: ops.relu(x), {"x": x}, rng)


def case_global_avg_pool(rng):
    x = _leaf(rng, 2, 3, 4, 5)
    return check_gradients(lambda: ops.global_avg_pool(x), {"x": x}, rng)


def case_max_pool2d(rng):
    x = _leaf(rng, 2, 2, 4, 4)
    return check_gradients(lambda: ops.max_pool2d(x, 2), {"x": x}, rng)


def case_batch_norm_train(rng):
    x, gamma, beta = _leaf(rng, 4, 3, 3, 3), _leaf(rng, 3), _leaf(rng, 3)
    return check_gradients(
        lambda: ops.batch_norm2d(x, gamma, beta, None, None, training=True),
        {"x": x, "gamma": gamma, "beta": beta},
        rng,
    )


def case_softmax_cross_entropy(rng):
    logits = _leaf(rng, 5, 7)
    labels = rng.integers(0, 7, size=5)
    weights = rng.uniform(0.1, 1.0, size=5)
    return check_gradients(lambda: ops.softmax_cross_entropy(logits, labels, weights), {"logits": logits}, rng)


def _dida(rng, channels: int, reduction: int, dilations: List[int]) -> DidaModule:
    module = DidaModule(DidaConfig(in_channels=channels, reduction=reduction, dilations=dilations), rng)
    module.conv4.weight.data = rng.standard_normal(module.conv4.weight.shape)
    module.bind_names("dida")
    return module


def case_generate_kernels(rng):
    module = _dida(rng, 4, 2, [1])
    x = _leaf(rng, 2, 4, 3, 3)
    inputs = {"x": x, "conv1": module.conv1.weight, "conv_k": module.generators[0].weight}
    return check_gradients(lambda: generate_kernels(x, module.conv1, module.generators[0]).bank, inputs, rng)


def case_dida_residual(rng):
    module = _dida(rng, 8, 4, [1, 2])
    x = _leaf(rng, 2, 8, 4, 4)
    inputs = {"x": x, **{name: p for name, p in module.named_parameters("dida")}}
    return check_gradients(lambda: module.residual(x), inputs, rng)


GRADCHECK_CASES: Dict[str, Callable[[np.random.Generator], Dict[str, float]]] = {
    "conv2d": case_conv2d,
    "conv2d_strided_dilated": case_conv2d_strided_dilated,
    "depthwise_conv2d_per_sample": case_depthwise,
    "depthwise_conv2d_per_sample_dilated": case_depthwise_dilated,
    "linear": case_linear,
    "relu": case_relu,
    "global_avg_pool": case_global_avg_pool,
    "max_pool2d": case_max_pool2d,
    "batch_norm2d_train": case_batch_norm_train,
    "softmax_cross_entropy": case_softmax_cross_entropy,
    "generate_kernels": case_generate_kernels,
    "dida_residual": case_dida_residual,
}


def run_case(name: str, seeds: int = DEFAULT_SEEDS) -> float:
    case = GRADCHECK_CASES[name]
    worst_error = 0.0
    with default_dtype(np.float64):
        for seed in range(seeds):
            errors = case(np.random.default_rng(seed))
            worst_error = max(worst_error, max(errors.values()))
    return worst_error


def cmd_gradcheck(
    ops_filter: str = "all",
    seeds: int = DEFAULT_SEEDS,
    tolerance: float = TOLERANCE,
) -> Dict[str, Dict[str, float]]:
    if ops_filter == "all":
        names = list(GRADCHECK_CASES)
    else:
        names = [name for name in ops_filter.split(",") if name]
        unknown = [name for name in names if name not in GRADCHECK_CASES]
        if unknown:
            raise ConfigError(f"unknown gradcheck op(s) {unknown} (known: {sorted(GRADCHECK_CASES)})")

    report: Dict[str, Dict[str, float]] = {}
    failed: List[str] = []
    started = time.perf_counter()
    for name in names:
        error = run_case(name, seeds)
        passed = error <= tolerance
        report[name] = {"max_rel_error": error, "passed": passed}
        logger.info(f"[GRADCHECK] {name}: max rel error {error:.3e} over {seeds} seeds {'ok' if passed else 'FAIL'}")
        if not passed:
            failed.append(name)
    logger.info(f"[GRADCHECK] {len(names)} op(s) in {time.perf_counter() - started:.1f}s")
    if failed:
        raise GradientError(f"gradient check failed for {', '.join(failed)} (tolerance {tolerance:g})", exit_code=3)
    return report

