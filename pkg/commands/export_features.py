import logging
from typing import Any, Dict, Optional, Sequence

import numpy as np
import pandas as pd

from checkpoint import load_model
from commands.evaluate import Normalization, select_dataset
from data.idx import LabeledSet
from train.engine import predict

logger = logging.getLogger(__name__)


def features_frame(ids: np.ndarray, domain: str, labels: np.ndarray, features: np.ndarray) -> pd.DataFrame:
    """Columns: id, domain, label (-1 when unlabeled), z_0 .. z_{d-1}."""
    frame = pd.DataFrame(features, columns=[f"z_{i}" for i in range(features.shape[1])])
    frame.insert(0, "label", labels.astype(np.int64))
    frame.insert(0, "domain", domain)
    frame.insert(0, "id", ids.astype(np.int64))
    return frame


def cmd_export_features(
    checkpoint_path: str,
    out_csv: str,
    config_path: Optional[str] = None,
    domain: str = "target",
    split: str = "test",
    images: Optional[str] = None,
    labels: Optional[str] = None,
    overrides: Sequence[str] = (),
) -> Dict[str, Any]:
    model, checkpoint = load_model(checkpoint_path)
    dataset = select_dataset(config_path, domain, split, images, labels, overrides)
    norm = Normalization.from_checkpoint(checkpoint)
    _, features = predict(model, dataset.images, norm.mean, norm.std, norm.image_size)
    tags = dataset.labels if isinstance(dataset, LabeledSet) else np.full(len(dataset), -1)
    frame = features_frame(np.arange(len(dataset)), dataset.domain, tags, features)
    frame.to_csv(out_csv, index=False)
    logger.info(f"[EVAL] wrote {len(frame)} feature rows ({features.shape[1]} dims) to {out_csv}")
    return {"rows": len(frame), "columns": len(frame.columns), "path": out_csv}
