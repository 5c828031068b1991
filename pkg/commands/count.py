import logging
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from commands.common import input_shape
from dida.module import closed_form_param_count
from models import build_model, summarize
from settings import load_config

logger = logging.getLogger(__name__)


def cmd_count(config_path: Optional[str], overrides: Sequence[str] = ()) -> Dict[str, Any]:
    """Per-layer and per-prefix parameter / MAC summary for one input image."""
    config = load_config(config_path, overrides)
    model = build_model(config.model, np.random.default_rng(config.train.seed))
    report = summarize(model, input_shape(config))
    report["dida_closed_form"] = {
        tap: closed_form_param_count(module.config) for tap, module in model.dida_modules.items()
    }
    return report


def format_table(report: Dict[str, Any]) -> str:
    lines: List[str] = [f"{'prefix':<16}{'params':>14}{'MACs':>16}"]
    for row in report["prefixes"]:
        lines.append(f"{row['prefix']:<16}{row['params']:>14,}{row['macs']:>16,}")
    lines.append(f"{'total':<16}{report['total_params']:>14,}{report['total_macs']:>16,}")
    for tap, count in report.get("dida_closed_form", {}).items():
        lines.append(f"closed-form DIDA params at {tap}: {count:,}")
    return "\n".join(lines)
