"""
Environment and experiment configuration.

An experiment config is a YAML document with four sections:

    model:   BackboneSpec (variant, dida options, insertion, mixstyle, ...)
    data:    DataConfig (source / target domains, normalisation, augmentation)
    train:   TrainConfig (tau, epochs, optimizer, schedule, ...)
    output:  run directory

Precedence: --override section.key=value > config file > built-in default.
"""
import logging
import os
from typing import Any, Dict, List, Optional, Sequence, Tuple

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from data.config import DataConfig, DomainSpec
from errors import ConfigError
from models import BackboneSpec
from train.schemas import TrainConfig

load_dotenv()

logger = logging.getLogger(__name__)

DATA_ROOT = os.getenv("DIDA_DATA_ROOT")
LOG_LEVEL = os.getenv("DIDA_LOG_LEVEL", "INFO")
RESOLVED_CONFIG_NAME = "resolved_config.yaml"


class OutputConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    run_dir: Optional[str] = None


def _default_data() -> DataConfig:
    return DataConfig(
        sources=[DomainSpec(name="toy-source")],
        target=DomainSpec(name="toy-target", recipe="invert", toy_seed=1),
    )


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    model: BackboneSpec = Field(default_factory=BackboneSpec)
    data: DataConfig = Field(default_factory=_default_data)
    train: TrainConfig = Field(default_factory=TrainConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)


def format_validation_error(e: ValidationError) -> str:
    parts = []
    for err in e.errors():
        location = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{location}: {err['msg']}")
    return "; ".join(parts)


def parse_override(text: str) -> Tuple[List[str], Any]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form section.key=value")
    key, raw = text.split("=", 1)
    path = [p for p in key.strip().split(".") if p]
    if len(path) < 2:
        raise ConfigError(f"override key {key!r} must name a section and a key, e.g. train.tau")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as e:
        raise ConfigError(f"override {text!r}: cannot parse value: {e}")
    return path, value


def apply_override(document: Dict[str, Any], path: Sequence[str], value: Any) -> None:
    node: Any = document
    for i, part in enumerate(path[:-1]):
        if isinstance(node, list):
            node = node[_list_index(node, part, path[:i + 1])]
            continue
        if node.get(part) is None:
            node[part] = {}
        node = node[part]
    last = path[-1]
    if isinstance(node, list):
        node[_list_index(node, last, path)] = value
    else:
        node[last] = value


def _list_index(node: list, part: str, path: Sequence[str]) -> int:
    try:
        index = int(part)
        node[index]
    except (ValueError, IndexError):
        raise ConfigError(f"override path {'.'.join(path)}: {part!r} is not an index of a {len(node)}-item list")
    return index


def build_config(document: Optional[Dict[str, Any]], overrides: Sequence[str] = (), seed: Optional[int] = None) -> ExperimentConfig:
    document = dict(document or {})
    for text in overrides:
        path, value = parse_override(text)
        apply_override(document, path, value)
        logger.info(f"[CONFIG] override {'.'.join(path)}={value!r}")
    if seed is not None:
        apply_override(document, ["train", "seed"], seed)
    try:
        return ExperimentConfig.model_validate(document)
    except ValidationError as e:
        raise ConfigError(f"invalid config: {format_validation_error(e)}")


def load_config(path: Optional[str], overrides: Sequence[str] = (), seed: Optional[int] = None) -> ExperimentConfig:
    document: Dict[str, Any] = {}
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path) as f:
            try:
                document = yaml.safe_load(f) or {}
            except yaml.YAMLError as e:
                raise ConfigError(f"{path}: not valid YAML: {e}")
        if not isinstance(document, dict):
            raise ConfigError(f"{path}: top level must be a mapping of sections")
    return build_config(document, overrides, seed)


def dump_config(config: ExperimentConfig) -> str:
    return yaml.safe_dump(config.model_dump(mode="json"), sort_keys=False)


def write_resolved_config(config: ExperimentConfig, run_dir: str) -> str:
    path = os.path.join(run_dir, RESOLVED_CONFIG_NAME)
    with open(path, "w") as f:
        f.write(dump_config(config))
    return path
