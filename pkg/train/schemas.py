from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    tau: float = Field(default=0.95, gt=0.0, le=1.0)
    epochs: int = Field(default=1, ge=1)
    # Defaults to one pass over the target training set.
    steps_per_epoch: Optional[int] = Field(default=None, ge=1)
    batch_size: int = Field(default=128, ge=1)
    eval_batch_size: int = Field(default=256, ge=1)
    base_lr: float = Field(default=2e-4, gt=0.0)
    optimizer: Literal["adam", "sgd_momentum"] = "adam"
    schedule: Literal["cosine", "constant"] = "cosine"
    dida_lr_multiplier: float = Field(default=10.0, gt=0.0)
    target_loss_mode: Literal["hard_threshold", "soft_weight", "none"] = "hard_threshold"
    warmup_steps: int = Field(default=0, ge=0)
    select: Literal["best", "last"] = "best"
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    weight_decay: float = Field(default=0.0, ge=0.0)
    seed: int = 0


class StepMetrics(BaseModel):
    step: int
    epoch: int
    L_s: float
    L_t: float
    L: float
    lr: float
    coverage: float = Field(ge=0.0, le=1.0)
    pseudo_label_accuracy: Optional[float] = None


class EpochMetrics(BaseModel):
    """Per-epoch record: losses and coverage are means over the epoch's steps, lr is the last step's."""
    epoch: int
    step: int
    L_s: float
    L_t: float
    L: float
    lr: float
    coverage: float = Field(ge=0.0, le=1.0)
    acc: Optional[float] = None
