import logging
import os
from dataclasses import dataclass
from typing import Optional

from data.config import DomainSpec
from data.idx import LabeledSet, load_idx
from data.synthetic import make_synthetic_domain, make_toy_set
from errors import DataError

logger = logging.getLogger(__name__)


@dataclass
class Domain:
    name: str
    train: LabeledSet
    test: Optional[LabeledSet] = None


def resolve_path(path: str, data_root: Optional[str]) -> str:
    """Relative paths that do not exist from the working directory fall back to data_root."""
    if os.path.isabs(path) or os.path.exists(path) or not data_root:
        return path
    return os.path.join(data_root, path)


def _load_split(spec: DomainSpec, images: Optional[str], labels: Optional[str], split: str, data_root) -> Optional[LabeledSet]:
    if images is None:
        return None
    if labels is None:
        raise DataError(f"domain {spec.name!r}: {split} split needs a labels file")
    return load_idx(resolve_path(images, data_root), resolve_path(labels, data_root), domain=spec.name, split=split)


def load_domain(
    spec: DomainSpec,
    data_root: Optional[str] = None,
    cache_dir: Optional[str] = None,
    num_classes: int = 10,
) -> Domain:
    if spec.kind == "toy":
        train = make_toy_set(spec.toy_count, seed=spec.toy_seed, num_classes=num_classes, domain=spec.name)
        test = make_toy_set(
            spec.toy_test_count, seed=spec.toy_seed + 10_000, num_classes=num_classes, domain=spec.name, split="test"
        )
    else:
        train = _load_split(spec, spec.images, spec.labels, "train", data_root)
        test = _load_split(spec, spec.test_images, spec.test_labels, "test", data_root)
    train = train.subset(spec.limit, spec.offset)
    if test is not None:
        test = test.subset(spec.test_limit, spec.test_offset)
    if spec.recipe:
        train = make_synthetic_domain(train, spec.recipe, seed=spec.recipe_seed, cache_dir=cache_dir)
        if test is not None:
            test = make_synthetic_domain(test, spec.recipe, seed=spec.recipe_seed + 1, cache_dir=cache_dir)
    for split in (train, test):
        if split is not None:
            split.check_classes(num_classes)
    logger.info(
        f"[DATA] domain {spec.name}: train={len(train)} test={len(test) if test is not None else 0} recipe={spec.recipe}"
    )
    return Domain(name=spec.name, train=train, test=test)
