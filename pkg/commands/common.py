"""Helpers shared by the sub-commands: run directories, seeded generators, data assembly."""
import logging
import os
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from data.domains import Domain, load_domain
from data.idx import LabeledSet, UnlabeledSet
from data.sampler import BatchRecipe
from errors import ConfigError, OutputDirError
from settings import DATA_ROOT, ExperimentConfig

logger = logging.getLogger(__name__)


def seeded_generators(seed: int) -> Dict[str, np.random.Generator]:
    """Independent streams for weight init and batch sampling."""
    init, data = np.random.SeedSequence(seed).spawn(2)
    return {"init": np.random.default_rng(init), "data": np.random.default_rng(data)}


def prepare_run_dir(run_dir: Optional[str], force: bool = False) -> str:
    if not run_dir:
        raise OutputDirError("no output directory: set output.run_dir or pass --run-dir")
    if os.path.isdir(run_dir) and os.listdir(run_dir) and not force:
        raise OutputDirError(f"run directory {run_dir} is not empty; pass --force to reuse it")
    os.makedirs(run_dir, exist_ok=True)
    stale_log = os.path.join(run_dir, "metrics.jsonl")
    if force and os.path.exists(stale_log):
        os.remove(stale_log)
    return run_dir


def batch_recipe(config: ExperimentConfig) -> BatchRecipe:
    data = config.data
    return BatchRecipe(augment=data.augment, mean=data.mean, std=data.std, image_size=data.image_size)


@dataclass
class ExperimentData:
    sources: List[Domain]
    target: Domain

    @property
    def source_sets(self) -> List[LabeledSet]:
        return [domain.train for domain in self.sources]

    @property
    def target_set(self) -> UnlabeledSet:
        # Target labels are dropped here; only the test split keeps them, for reporting.
        return self.target.train.unlabeled()

    def domain(self, name: str) -> Domain:
        if name == "target":
            return self.target
        for i, domain in enumerate(self.sources):
            if name in (domain.name, f"source{i}"):
                return domain
        if name == self.target.name:
            return self.target
        known = ["target", self.target.name] + [d.name for d in self.sources]
        raise ConfigError(f"unknown domain {name!r} (known: {known})")


def load_experiment_data(config: ExperimentConfig) -> ExperimentData:
    data = config.data
    sources = [load_domain(spec, DATA_ROOT, data.cache_dir, data.num_classes) for spec in data.sources]
    target = load_domain(data.target, DATA_ROOT, data.cache_dir, data.num_classes)
    return ExperimentData(sources=sources, target=target)


def input_shape(config: ExperimentConfig, batch: int = 1) -> tuple:
    return (batch, config.model.in_channels, config.data.image_size, config.data.image_size)
