import json
import logging
import os
from typing import Any, Dict, Optional, Sequence

from commands.common import batch_recipe, load_experiment_data, prepare_run_dir, seeded_generators
from models import build_model
from settings import ExperimentConfig, load_config, write_resolved_config
from train.engine import TrainState, fit

logger = logging.getLogger(__name__)


def run_experiment(config: ExperimentConfig, run_dir: str) -> TrainState:
    """Train one resolved config into an already prepared run directory."""
    write_resolved_config(config, run_dir)
    rngs = seeded_generators(config.train.seed)
    data = load_experiment_data(config)
    model = build_model(config.model, rngs["init"])
    state = fit(
        model,
        data.source_sets,
        data.target_set,
        config.train,
        batch_recipe(config),
        rngs["data"],
        run_dir=run_dir,
        target_test=data.target.test,
        meta={
            "seed": config.train.seed,
            "normalize": {"mean": config.data.mean, "std": config.data.std, "image_size": config.data.image_size},
        },
        prefetch=config.data.prefetch,
    )
    summary = {
        "steps": state.step,
        "epochs": state.epoch,
        "best_accuracy": state.best_accuracy,
        "best_epoch": state.best_epoch,
        "final_accuracy": state.epochs[-1].acc if state.epochs else None,
        "checkpoint": state.selected_checkpoint,
    }
    with open(os.path.join(run_dir, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2)
    return state


def cmd_train(
    config_path: Optional[str],
    overrides: Sequence[str] = (),
    seed: Optional[int] = None,
    run_dir: Optional[str] = None,
    force: bool = False,
) -> Dict[str, Any]:
    config = load_config(config_path, overrides, seed)
    if run_dir:
        config.output.run_dir = run_dir
    run_dir = prepare_run_dir(config.output.run_dir, force)
    logger.info(f"[TRAIN] run dir {run_dir} seed={config.train.seed}")
    state = run_experiment(config, run_dir)
    logger.info(f"[TRAIN] done: steps={state.step} best_acc={state.best_accuracy}")
    return {"run_dir": run_dir, "best_accuracy": state.best_accuracy, "checkpoint": state.selected_checkpoint}
