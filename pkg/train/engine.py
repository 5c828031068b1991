"""
Training loop: train_step on one DomainBatch, evaluate on a labeled set, fit over epochs.

Every step runs a source forward (train mode), a weak-view forward in
inference mode without a graph, and, when at least one pseudo-label carries
weight, a strong-view forward. L = L_s + L_t is backpropagated once.
"""
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from checkpoint import save_model
from data.idx import LabeledSet, UnlabeledSet
from data.normalize import normalize
from data.prefetch import PrefetchLoader
from data.sampler import BatchRecipe, DomainBatch, EpochSampler, steps_per_epoch
from errors import DataError, DivergenceError
from models import DidaNet
from tensor import ops
from tensor.core import backward, no_grad
from tensor.optim import Optimizer, cosine_lr
from train.losses import accepted, loss_source, loss_target, pseudo_label, target_weights
from train.schemas import EpochMetrics, StepMetrics, TrainConfig

logger = logging.getLogger(__name__)

DIDA_PREFIX = "dida."


def lr_multiplier_for(cfg: TrainConfig):
    def multiplier(name: str) -> float:
        return cfg.dida_lr_multiplier if name.startswith(DIDA_PREFIX) else 1.0
    return multiplier


def build_optimizer(model: DidaNet, cfg: TrainConfig) -> Optimizer:
    return Optimizer(
        cfg.optimizer,
        model.parameters(),
        cfg.base_lr,
        lr_multiplier=lr_multiplier_for(cfg),
        momentum=cfg.momentum,
        weight_decay=cfg.weight_decay,
    )


def scheduled_lr(cfg: TrainConfig, step: int, total_steps: int) -> float:
    """Learning rate for 0-based step; the cosine reaches 0 on the last step (total_steps - 1)."""
    if cfg.schedule == "constant":
        return cfg.base_lr
    return cosine_lr(step, max(total_steps - 1, 1), cfg.base_lr)


def grad_norms(model: DidaNet) -> Dict[str, float]:
    return {p.name: float(np.linalg.norm(p.grad)) for p in model.parameters() if p.grad is not None}


def train_step(
    model: DidaNet,
    batch: DomainBatch,
    optimizer: Optimizer,
    cfg: TrainConfig,
    lr: float,
    step: int = 0,
    epoch: int = 0,
    oracle_labels: Optional[np.ndarray] = None,
) -> StepMetrics:
    """
    One optimisation step. oracle_labels (true target labels, tests only) adds
    pseudo-label accuracy to the metrics; they never reach the loss.
    """
    model.train()
    source = model(batch.source_x)
    l_s = loss_source(source.logits, batch.source_y)
    loss = l_s
    l_t_value = 0.0
    coverage = 0.0
    label_accuracy = None

    if cfg.target_loss_mode != "none" and step >= cfg.warmup_steps:
        model.eval()
        with no_grad():
            weak = model(batch.target_weak)
        model.train()
        labels, confidence = pseudo_label(weak.logits)
        mask = accepted(confidence, cfg.tau)
        coverage = float(mask.mean()) if len(mask) else 0.0
        if oracle_labels is not None and mask.any():
            label_accuracy = float((labels[mask] == np.asarray(oracle_labels)[mask]).mean())
        if target_weights(confidence, cfg.tau, cfg.target_loss_mode).any():
            strong = model(batch.target_strong)
            l_t = loss_target(strong.logits, labels, confidence, cfg.tau, cfg.target_loss_mode)
            l_t_value = l_t.item()
            loss = ops.add(l_s, l_t)

    optimizer.zero_grad()
    backward(loss)
    total = loss.item()
    if not math.isfinite(total):
        raise DivergenceError(f"non-finite loss {total} at step {step}", lr=lr, grad_norms=grad_norms(model))
    optimizer.step(lr)

    return StepMetrics(
        step=step,
        epoch=epoch,
        L_s=l_s.item(),
        L_t=l_t_value,
        L=total,
        lr=lr,
        coverage=coverage,
        pseudo_label_accuracy=label_accuracy,
    )


def predict(
    model: DidaNet,
    images: np.ndarray,
    mean: float,
    std: float,
    image_size: int = 32,
    batch_size: int = 256,
) -> Tuple[np.ndarray, np.ndarray]:
    """Eval-mode logits and pooled features Z for u8 images [M, H, W]."""
    model.eval()
    logits, features = [], []
    with no_grad():
        for start in range(0, len(images), batch_size):
            out = model(normalize(images[start:start + batch_size], mean, std, image_size))
            logits.append(out.logits.data)
            features.append(out.features.data.mean(axis=(2, 3)))
    return np.concatenate(logits), np.concatenate(features)


def evaluate(
    model: DidaNet,
    test: LabeledSet,
    mean: float = 0.1307,
    std: float = 0.3081,
    image_size: int = 32,
    batch_size: int = 256,
) -> float:
    if test is None or len(test.images) == 0:
        raise DataError("evaluate needs a non-empty labeled set")
    logits, _ = predict(model, test.images, mean, std, image_size, batch_size)
    return float((np.argmax(logits, axis=1) == test.labels).mean())


class MetricLog:
    """Append-only JSON-lines log, one object per step or epoch record."""

    def __init__(self, path: Optional[str]):
        self.path = path
        self.records: List[Dict[str, Any]] = []

    def write(self, kind: str, payload: Dict[str, Any]) -> None:
        record = {"kind": kind, **{k: v for k, v in payload.items() if v is not None}}
        self.records.append(record)
        if self.path:
            with open(self.path, "a") as f:
                f.write(json.dumps(record) + "\n")


@dataclass
class TrainState:
    model: DidaNet
    optimizer: Optimizer
    step: int = 0
    epoch: int = 0
    history: List[StepMetrics] = field(default_factory=list)
    epochs: List[EpochMetrics] = field(default_factory=list)
    best_accuracy: Optional[float] = None
    best_epoch: Optional[int] = None
    checkpoints: Dict[str, str] = field(default_factory=dict)
    rng_state: Dict[str, Any] = field(default_factory=dict)

    @property
    def selected_checkpoint(self) -> Optional[str]:
        return self.checkpoints.get("best") or self.checkpoints.get("last")


def fit(
    model: DidaNet,
    sources: List[LabeledSet],
    target: UnlabeledSet,
    cfg: TrainConfig,
    recipe: BatchRecipe,
    data_rng: np.random.Generator,
    run_dir: Optional[str] = None,
    target_test: Optional[LabeledSet] = None,
    meta: Optional[Dict[str, Any]] = None,
    prefetch: int = 0,
) -> TrainState:
    """
    Train for cfg.epochs. Target test labels, when given, are only used for the
    per-epoch accuracy and best-checkpoint selection.
    """
    optimizer = build_optimizer(model, cfg)
    state = TrainState(model=model, optimizer=optimizer)
    log = MetricLog(os.path.join(run_dir, "metrics.jsonl") if run_dir else None)
    steps = cfg.steps_per_epoch or steps_per_epoch(target, cfg.batch_size)
    total_steps = cfg.epochs * steps
    logger.info(
        f"[TRAIN] epochs={cfg.epochs} steps/epoch={steps} optimizer={cfg.optimizer} "
        f"base_lr={cfg.base_lr} tau={cfg.tau} mode={cfg.target_loss_mode}"
    )

    for epoch in range(cfg.epochs):
        sampler = EpochSampler(sources, target, cfg.batch_size, data_rng, recipe, steps=steps)
        batches = PrefetchLoader(sampler, depth=prefetch) if prefetch else sampler
        epoch_metrics: List[StepMetrics] = []
        for batch in batches:
            lr = scheduled_lr(cfg, state.step, total_steps)
            metrics = train_step(model, batch, optimizer, cfg, lr, step=state.step, epoch=epoch)
            log.write("step", metrics.model_dump())
            logger.debug(
                f"[TRAIN] step={metrics.step} L={metrics.L:.4f} L_s={metrics.L_s:.4f} "
                f"L_t={metrics.L_t:.4f} coverage={metrics.coverage:.3f} lr={lr:.3e}"
            )
            state.history.append(metrics)
            epoch_metrics.append(metrics)
            state.step += 1

        accuracy = None
        if target_test is not None:
            accuracy = evaluate(model, target_test, recipe.mean, recipe.std, recipe.image_size, cfg.eval_batch_size)
        summary = EpochMetrics(
            epoch=epoch,
            step=state.step,
            L_s=float(np.mean([m.L_s for m in epoch_metrics])),
            L_t=float(np.mean([m.L_t for m in epoch_metrics])),
            L=float(np.mean([m.L for m in epoch_metrics])),
            lr=epoch_metrics[-1].lr,
            coverage=float(np.mean([m.coverage for m in epoch_metrics])),
            acc=accuracy,
        )
        log.write("epoch", summary.model_dump())
        state.epochs.append(summary)
        state.epoch = epoch + 1
        logger.info(
            f"[TRAIN] epoch {epoch + 1}/{cfg.epochs} L={summary.L:.4f} "
            f"coverage={summary.coverage:.3f} acc={accuracy if accuracy is not None else 'n/a'}"
        )

        improved = accuracy is not None and (state.best_accuracy is None or accuracy > state.best_accuracy)
        if run_dir:
            checkpoint_meta = {**(meta or {}), "epoch": epoch + 1, "accuracy": accuracy}
            path = os.path.join(run_dir, "last.ckpt")
            save_model(path, model, checkpoint_meta)
            state.checkpoints["last"] = path
            if cfg.select == "best" and improved:
                path = os.path.join(run_dir, "best.ckpt")
                save_model(path, model, checkpoint_meta)
                state.checkpoints["best"] = path
        if improved:
            state.best_accuracy, state.best_epoch = accuracy, epoch + 1

    state.rng_state = {"data": data_rng.bit_generator.state}
    if getattr(model, "mixstyle_layer", None):
        state.rng_state["mixstyle"] = model.mixstyle.rng.bit_generator.state
    return state
