"""
Backbone assembly for DIDA-Net.

A backbone is a list of stages (conv block + optional trailing max-pool).
The DIDA branch taps the output of the insertion stage and is fused
with the output of the next stage's block, before that stage's pooling:

    h ─► stage_k ─┬─► block_{k+1} ──┐
                  └─► DIDA ─────────┴─► Z = static + residual

The classifier (global average pool, optional hidden FC, final linear layer)
is shared by every domain.
"""
import logging
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from dida.config import DidaConfig, DidaOptions
from dida.mixstyle import MixStyle
from dida.module import DidaModule, fuse
from errors import ConfigError, ShapeError
from tensor import ops
from tensor.core import Tensor, no_grad
from tensor.nn import BatchNorm2d, Conv2d, Linear, Module
from tensor.profile import mac_counter

logger = logging.getLogger(__name__)

Variant = Literal["digit3conv", "digit2conv", "smallresnet"]

# (width, kernel, pool) per stage.
DIGIT3_LAYOUT = [(64, 5, True), (64, 5, True), (128, 3, False)]
DIGIT2_LAYOUT = [(64, 5, True), (64, 5, False)]
RESNET_LAYOUT = [(16, 3, False), (16, 3, True), (32, 3, True), (64, 3, False), (128, 3, False)]
DEFAULT_INSERTION = {"digit3conv": "block2", "digit2conv": "block1", "smallresnet": "block3"}


class BackboneSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    variant: Variant = "digit3conv"
    num_classes: int = Field(default=10, gt=1)
    in_channels: int = Field(default=1, gt=0)
    # Overrides the per-stage widths of the chosen variant.
    widths: Optional[List[int]] = None
    fc_hidden: int = Field(default=3072, ge=0)
    dida: Optional[DidaOptions] = None
    insertion: Optional[Union[str, List[str]]] = None
    keep_static: bool = True
    mixstyle: bool = False
    mixstyle_after: str = "block1"
    mixstyle_prob: float = Field(default=0.5, ge=0.0, le=1.0)
    mixstyle_alpha: float = Field(default=0.1, gt=0.0)

    @field_validator("insertion")
    @classmethod
    def non_empty_insertion(cls, value):
        if isinstance(value, list) and not value:
            raise ValueError("insertion list must not be empty")
        return value

    def layout(self) -> List[Tuple[str, int, int, bool]]:
        """(name, width, kernel, pool) per stage."""
        base = {"digit3conv": DIGIT3_LAYOUT, "digit2conv": DIGIT2_LAYOUT, "smallresnet": RESNET_LAYOUT}[self.variant]
        widths = self.widths or [w for w, _, _ in base]
        if len(widths) != len(base):
            raise ConfigError(f"{self.variant} needs {len(base)} widths, got {widths}")
        names = ["stem", "block1", "block2", "block3", "block4"] if self.variant == "smallresnet" else [
            f"block{i + 1}" for i in range(len(base))
        ]
        return [(name, w, k, pool) for name, w, (_, k, pool) in zip(names, widths, base)]

    def taps(self) -> List[str]:
        if self.dida is None:
            return []
        insertion = self.insertion or DEFAULT_INSERTION[self.variant]
        return [insertion] if isinstance(insertion, str) else list(insertion)


@dataclass
class ModelOutput:
    logits: Tensor
    features: Tensor


class ConvBlock(Module):
    """conv (bias) → BN → ReLU."""

    def __init__(self, cin: int, cout: int, kernel: int, rng: np.random.Generator):
        super().__init__()
        self.conv = Conv2d(cin, cout, kernel, rng, padding=kernel // 2)
        self.bn = BatchNorm2d(cout)

    def forward(self, x: Tensor) -> Tensor:
        return ops.relu(self.bn(self.conv(x)))


class ResidualBlock(Module):
    """Basic residual block at stride 1; a 1x1 projection matches channels when they change."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        super().__init__()
        self.conv1 = Conv2d(cin, cout, 3, rng, padding=1, bias=False)
        self.bn1 = BatchNorm2d(cout)
        self.conv2 = Conv2d(cout, cout, 3, rng, padding=1, bias=False)
        self.bn2 = BatchNorm2d(cout)
        if cin != cout:
            self.proj = Conv2d(cin, cout, 1, rng, bias=False)
            self.proj_bn = BatchNorm2d(cout)
        else:
            self.proj = None

    def forward(self, x: Tensor) -> Tensor:
        out = ops.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        shortcut = self.proj_bn(self.proj(x)) if self.proj is not None else x
        return ops.relu(ops.add(out, shortcut))


class DidaTaps(Module):
    """One DIDA module per insertion point, named after the stage it taps."""

    def __init__(self, modules: Dict[str, DidaModule]):
        super().__init__()
        for tap, module in modules.items():
            setattr(self, tap, module)


class DidaNet(Module):
    def __init__(self, spec: BackboneSpec, rng: np.random.Generator):
        super().__init__()
        self.spec = spec
        layout = spec.layout()
        names = [name for name, _, _, _ in layout]
        taps = spec.taps()
        self.stage_names: List[str] = names
        self.pools: Dict[str, bool] = {name: pool for name, _, _, pool in layout}
        self.fusion: Dict[str, str] = {}

        for tap in taps:
            if tap not in names:
                raise ConfigError(f"insertion {tap!r} is not a layer of {spec.variant} (layers: {names})")
            index = names.index(tap)
            if index == len(names) - 1:
                raise ConfigError(f"insertion {tap!r} is the last layer; there is no static block to fuse with")
            self.fusion[names[index + 1]] = tap

        cin = spec.in_channels
        self.stage_channels: Dict[str, int] = {}
        for name, width, kernel, _ in layout:
            skip_static = name in self.fusion and not spec.keep_static
            if not skip_static:
                if spec.variant == "smallresnet" and name != "stem":
                    block = ResidualBlock(cin, width, rng)
                else:
                    block = ConvBlock(cin, width, kernel, rng)
                setattr(self, name, block)
            self.stage_channels[name] = width
            cin = width

        self.mixstyle_layer: Optional[str] = spec.mixstyle_after if spec.mixstyle else None
        if self.mixstyle_layer is not None:
            if self.mixstyle_layer not in names:
                raise ConfigError(f"mixstyle_after {self.mixstyle_layer!r} is not a layer of {spec.variant}")
            self.mixstyle = MixStyle(
                np.random.default_rng(int(rng.integers(2 ** 63))),
                apply_prob=spec.mixstyle_prob, alpha=spec.mixstyle_alpha,
            )

        if taps:
            modules: "OrderedDict[str, DidaModule]" = OrderedDict()
            for target, tap in self.fusion.items():
                config = self._resolve_dida(spec.dida, tap, target)
                modules[tap] = DidaModule(config, rng)
            if len(modules) == 1:
                self.dida = next(iter(modules.values()))
                self.dida_modules = {next(iter(modules)): self.dida}
            else:
                self.dida = DidaTaps(modules)
                self.dida_modules = dict(modules)
        else:
            self.dida_modules = {}

        feature_dim = self.stage_channels[names[-1]]
        if spec.variant != "smallresnet" and spec.fc_hidden:
            self.fc1 = Linear(feature_dim, spec.fc_hidden, rng)
            feature_dim = spec.fc_hidden
        else:
            self.fc1 = None
        self.classifier = Linear(feature_dim, spec.num_classes, rng)
        self.bind_names()

    def _resolve_dida(self, options: DidaOptions, tap: str, target: str) -> DidaConfig:
        tap_channels = self.stage_channels[tap]
        target_channels = self.stage_channels[target]
        if options.in_channels is not None and options.in_channels != tap_channels:
            raise ConfigError(
                f"DIDA in_channels {options.in_channels} does not match output channels {tap_channels} of {tap!r}"
            )
        if options.out_channels is not None and options.out_channels != target_channels:
            raise ConfigError(
                f"DIDA out_channels {options.out_channels} does not match output channels {target_channels} of {target!r}"
            )
        try:
            return options.resolve(tap_channels, target_channels)
        except ValueError as e:
            raise ConfigError(f"invalid DIDA configuration at {tap!r}: {e}")

    @property
    def has_dida(self) -> bool:
        return bool(self.dida_modules)

    def forward(self, x: Tensor) -> ModelOutput:
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise ShapeError(f"model expects input [N, {self.spec.in_channels}, H, W], got shape {x.shape}")
        h = x
        for name in self.stage_names:
            block = self._modules.get(name)
            out = block(h) if block is not None else None
            if name in self.fusion:
                residual = self.dida_modules[self.fusion[name]](h)
                out = fuse(out, residual) if out is not None else residual
            if self.pools[name]:
                out = ops.max_pool2d(out, 2)
            if name == self.mixstyle_layer:
                out = self.mixstyle(out)
            h = out
        features = h
        pooled = ops.flatten(ops.global_avg_pool(features))
        if self.fc1 is not None:
            pooled = ops.relu(self.fc1(pooled))
        return ModelOutput(logits=self.classifier(pooled), features=features)


def build_model(spec: BackboneSpec, rng: np.random.Generator) -> DidaNet:
    model = DidaNet(spec, rng)
    logger.info(
        f"[MODEL] built {spec.variant} taps={list(model.dida_modules)} params={count_params(model)}"
    )
    return model


def forward(model: DidaNet, x: Tensor, mode: str = "eval") -> ModelOutput:
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    model.train(mode == "train")
    return model(x)


def count_params(module: Module, prefix: Optional[str] = None) -> int:
    total = 0
    for name, p in module.named_parameters():
        if prefix is None or name == prefix or name.startswith(prefix + "."):
            total += int(p.data.size)
    return total


def param_prefixes(model: Module) -> List[str]:
    return [name for name, child in model.children() if child.parameters()]


def count_params_by_prefix(model: Module) -> "OrderedDict[str, int]":
    return OrderedDict((prefix, count_params(model, prefix)) for prefix in param_prefixes(model))


def _trace(model: DidaNet, input_shape: Tuple[int, ...]):
    was_training = model.training
    model.eval()
    try:
        with no_grad(), mac_counter() as counter:
            model(Tensor(np.zeros(input_shape)))
    finally:
        model.train(was_training)
    return counter


def count_macs(model: DidaNet, input_shape: Tuple[int, ...]) -> int:
    return _trace(model, input_shape).total


def summarize(model: DidaNet, input_shape: Tuple[int, ...]) -> Dict[str, object]:
    """Per-layer rows (name, shape, params, MACs) and per-prefix totals."""
    counter = _trace(model, input_shape)
    layer_params: "OrderedDict[str, int]" = OrderedDict()
    for name, p in model.named_parameters():
        owner = name.rsplit(".", 1)[0]
        layer_params[owner] = layer_params.get(owner, 0) + int(p.data.size)
    rows = []
    for name in list(OrderedDict.fromkeys(list(layer_params) + list(counter.per_layer))):
        rows.append({
            "name": name,
            "shape": list(counter.shapes.get(name, ())),
            "params": layer_params.get(name, 0),
            "macs": counter.per_layer.get(name, 0),
        })
    prefixes = param_prefixes(model)
    macs_by_prefix = counter.by_prefix(prefixes)
    totals = [
        {"prefix": prefix, "params": count_params(model, prefix), "macs": macs_by_prefix.get(prefix, 0)}
        for prefix in prefixes
    ]
    return {
        "input_shape": list(input_shape),
        "layers": rows,
        "prefixes": totals,
        "total_params": count_params(model),
        "total_macs": counter.total,
    }
