from train.engine import MetricLog, TrainState, build_optimizer, evaluate, fit, predict, scheduled_lr, train_step
from train.losses import loss_source, loss_target, pseudo_label, target_weights
from train.schemas import EpochMetrics, StepMetrics, TrainConfig

__all__ = [
    "EpochMetrics", "MetricLog", "StepMetrics", "TrainConfig", "TrainState", "build_optimizer", "evaluate", "fit",
    "loss_source", "loss_target", "predict", "pseudo_label", "scheduled_lr", "target_weights", "train_step",
]
