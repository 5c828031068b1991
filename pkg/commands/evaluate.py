import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence

from checkpoint import Checkpoint, load_model
from commands.common import load_experiment_data
from data.idx import LabeledSet, load_idx
from errors import ConfigError, DataError
from settings import load_config
from train.engine import evaluate

logger = logging.getLogger(__name__)


@dataclass
class Normalization:
    mean: float
    std: float
    image_size: int

    @classmethod
    def from_checkpoint(cls, checkpoint: Checkpoint) -> "Normalization":
        values = checkpoint.meta.get("normalize") or {}
        return cls(
            mean=float(values.get("mean", 0.1307)),
            std=float(values.get("std", 0.3081)),
            image_size=int(values.get("image_size", 32)),
        )


def select_dataset(
    config_path: Optional[str],
    domain: str = "target",
    split: str = "test",
    images: Optional[str] = None,
    labels: Optional[str] = None,
    overrides: Sequence[str] = (),
):
    """An IDX pair given directly, or a domain/split of an experiment config."""
    if images:
        return load_idx(images, labels, split=split)
    if not config_path:
        raise ConfigError("pass either --images/--labels or --config with --domain")
    config = load_config(config_path, overrides)
    chosen = load_experiment_data(config).domain(domain)
    dataset = chosen.test if split == "test" else chosen.train
    if dataset is None:
        raise DataError(f"domain {chosen.name!r} has no {split} split")
    return dataset


def cmd_eval(
    checkpoint_path: str,
    config_path: Optional[str] = None,
    domain: str = "target",
    split: str = "test",
    images: Optional[str] = None,
    labels: Optional[str] = None,
    overrides: Sequence[str] = (),
) -> Dict[str, Any]:
    model, checkpoint = load_model(checkpoint_path)
    dataset = select_dataset(config_path, domain, split, images, labels, overrides)
    if not isinstance(dataset, LabeledSet):
        raise DataError("evaluation needs labels")
    norm = Normalization.from_checkpoint(checkpoint)
    accuracy = evaluate(model, dataset, norm.mean, norm.std, norm.image_size)
    logger.info(f"[EVAL] {dataset.domain}/{dataset.split}: accuracy={accuracy:.4f} over {len(dataset)} images")
    return {"checkpoint": checkpoint_path, "domain": dataset.domain, "split": dataset.split, "count": len(dataset), "accuracy": accuracy}
