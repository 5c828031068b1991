"""
K x B + B batch composition.

Each step draws B labeled images from every source domain and B images from
the unlabeled target. An epoch is one pass over the target training set: the
target is walked in a per-epoch permutation, sources are drawn at random.
"""
import logging
import math
from dataclasses import dataclass
from typing import Iterator, List, Optional

import numpy as np

from data.augment import strong_augment, weak_augment
from data.config import AugmentConfig
from data.idx import LabeledSet, UnlabeledSet
from data.normalize import normalize
from errors import DataError
from tensor.core import Tensor

logger = logging.getLogger(__name__)


@dataclass
class DomainBatch:
    source_x: Tensor
    source_y: np.ndarray
    target_weak: Tensor
    target_strong: Tensor
    # Row i of both target views comes from target image target_ids[i].
    target_ids: np.ndarray
    source_domains: np.ndarray

    @property
    def source_size(self) -> int:
        return self.source_x.shape[0]

    @property
    def target_size(self) -> int:
        return self.target_weak.shape[0]


@dataclass
class BatchRecipe:
    """Augmentation and normalisation settings shared by every batch of a run."""
    augment: AugmentConfig
    mean: float
    std: float
    image_size: int = 32


def draw_indices(size: int, batch_size: int, rng: np.random.Generator, name: str) -> np.ndarray:
    if batch_size > size:
        logger.warning(f"[DATA] batch size {batch_size} exceeds {size} images in {name}; sampling with replacement")
        return rng.choice(size, size=batch_size, replace=True)
    return rng.choice(size, size=batch_size, replace=False)


def sample_batch(
    sources: List[LabeledSet],
    target: UnlabeledSet,
    batch_size: int,
    rng: np.random.Generator,
    recipe: BatchRecipe,
    target_ids: Optional[np.ndarray] = None,
) -> DomainBatch:
    if not sources:
        raise DataError("at least one source domain is required")
    if batch_size < 1:
        raise DataError(f"batch size must be positive, got {batch_size}")
    aug = recipe.augment

    source_images, source_labels, source_domains = [], [], []
    for k, source in enumerate(sources):
        index = draw_indices(len(source), batch_size, rng, source.domain)
        source_images.append(weak_augment(source.images[index], rng, shift=aug.weak_shift, flip=aug.weak_flip))
        source_labels.append(source.labels[index])
        source_domains.append(np.full(batch_size, k, dtype=np.int64))

    if target_ids is None:
        target_ids = draw_indices(len(target), batch_size, rng, target.domain)
    raw = target.images[target_ids]
    weak = weak_augment(raw, rng, shift=aug.weak_shift, flip=aug.weak_flip)
    strong = strong_augment(raw, rng, num_ops=aug.strong_ops, ops=aug.strong_ops_pool, erase_fraction=aug.erase_fraction)

    return DomainBatch(
        source_x=normalize(np.concatenate(source_images), recipe.mean, recipe.std, recipe.image_size),
        source_y=np.concatenate(source_labels).astype(np.int64),
        target_weak=normalize(weak, recipe.mean, recipe.std, recipe.image_size),
        target_strong=normalize(strong, recipe.mean, recipe.std, recipe.image_size),
        target_ids=np.asarray(target_ids, dtype=np.int64),
        source_domains=np.concatenate(source_domains),
    )


def steps_per_epoch(target: UnlabeledSet, batch_size: int) -> int:
    return max(1, math.ceil(len(target) / batch_size))


class EpochSampler:
    """Yields the batches of one epoch; the last target chunk wraps around the permutation."""

    def __init__(
        self,
        sources: List[LabeledSet],
        target: UnlabeledSet,
        batch_size: int,
        rng: np.random.Generator,
        recipe: BatchRecipe,
        steps: Optional[int] = None,
    ):
        self.sources = sources
        self.target = target
        self.batch_size = batch_size
        self.rng = rng
        self.recipe = recipe
        self.steps = steps or steps_per_epoch(target, batch_size)

    def __len__(self) -> int:
        return self.steps

    def target_chunks(self) -> List[np.ndarray]:
        order = self.rng.permutation(len(self.target))
        needed = self.steps * self.batch_size
        order = np.resize(order, needed)
        return [order[i * self.batch_size:(i + 1) * self.batch_size] for i in range(self.steps)]

    def batch(self, ids: np.ndarray) -> DomainBatch:
        return sample_batch(self.sources, self.target, self.batch_size, self.rng, self.recipe, target_ids=ids)

    def __iter__(self) -> Iterator[DomainBatch]:
        for ids in self.target_chunks():
            yield self.batch(ids)
