"""
Ablation matrix runner.

A plan names a base experiment config and a list of runs, each a set of
overrides on top of the base. Every (run, seed) pair trains in its own
sub-directory; failures are recorded and the matrix carries on.

    base: toy.yaml
    seeds: [0, 1]
    runs:
      - name: dida
      - name: static_cnn
        overrides: ["model.dida.generator_mode=static_cnn"]
"""
import json
import logging
import os
from datetime import datetime
from enum import Enum
from typing import Any, Dict, List, Optional

import pandas as pd
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from commands.common import prepare_run_dir
from commands.train import run_experiment
from errors import ConfigError, DidaError
from settings import format_validation_error, load_config

logger = logging.getLogger(__name__)

SUMMARY_NAME = "ablation_summary.json"
JOBS_CSV_NAME = "ablation_jobs.csv"


class JobStatus(str, Enum):
    PENDING = "pending"
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"


class AblationRun(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    overrides: List[str] = Field(default_factory=list)


class AblationPlan(BaseModel):
    model_config = ConfigDict(extra="forbid")

    base: str
    seeds: List[int] = Field(default_factory=lambda: [0], min_length=1)
    overrides: List[str] = Field(default_factory=list)
    runs: List[AblationRun] = Field(min_length=1)


class AblationJob(BaseModel):
    name: str
    seed: int
    run_dir: str
    overrides: List[str]
    status: JobStatus = JobStatus.PENDING
    started_at: Optional[datetime] = None
    completed_at: Optional[datetime] = None
    error: Optional[str] = None
    best_accuracy: Optional[float] = None
    final_accuracy: Optional[float] = None


def load_plan(path: str) -> AblationPlan:
    if not os.path.exists(path):
        raise ConfigError(f"ablation plan not found: {path}")
    with open(path) as f:
        document = yaml.safe_load(f) or {}
    try:
        plan = AblationPlan.model_validate(document)
    except ValidationError as e:
        raise ConfigError(f"invalid ablation plan {path}: {format_validation_error(e)}")
    if not os.path.isabs(plan.base) and not os.path.exists(plan.base):
        plan.base = os.path.join(os.path.dirname(path), plan.base)
    names = [run.name for run in plan.runs]
    if len(set(names)) != len(names):
        raise ConfigError(f"ablation run names must be unique, got {names}")
    return plan


def run_job(job: AblationJob, base: str, force: bool) -> None:
    job.status = JobStatus.RUNNING
    job.started_at = datetime.utcnow()
    logger.info(f"[ABLATE] starting {job.name} seed={job.seed}")
    try:
        config = load_config(base, job.overrides, job.seed)
        config.output.run_dir = job.run_dir
        prepare_run_dir(job.run_dir, force)
        state = run_experiment(config, job.run_dir)
        job.best_accuracy = state.best_accuracy
        job.final_accuracy = state.epochs[-1].acc if state.epochs else None
        job.status = JobStatus.COMPLETED
    except DidaError as e:
        job.status = JobStatus.FAILED
        job.error = str(e)
        logger.error(f"[ABLATE] {job.name} seed={job.seed} failed: {e}")
    finally:
        job.completed_at = datetime.utcnow()


def summarize_jobs(jobs: List[AblationJob]) -> Dict[str, Any]:
    frame = jobs_frame(jobs)
    completed = frame[(frame["status"] == JobStatus.COMPLETED.value) & frame["final_accuracy"].notna()]
    means = completed.groupby("name", sort=False)["final_accuracy"].mean()
    return {
        "jobs": [job.model_dump(mode="json") for job in jobs],
        "mean_final_accuracy": {name: float(value) for name, value in means.items()},
        "ordering": list(means.sort_values(ascending=False, kind="stable").index),
        "failed": [f"{job.name}/seed{job.seed}" for job in jobs if job.status == JobStatus.FAILED],
    }


def jobs_frame(jobs: List[AblationJob]) -> pd.DataFrame:
    """One row per (run, seed) job."""
    return pd.DataFrame(
        [
            {
                "name": job.name,
                "seed": job.seed,
                "status": job.status.value,
                "final_accuracy": job.final_accuracy,
                "run_dir": job.run_dir,
            }
            for job in jobs
        ],
        columns=["name", "seed", "status", "final_accuracy", "run_dir"],
    ).astype({"final_accuracy": float})


def cmd_ablate(plan_path: str, run_dir: str, force: bool = False) -> Dict[str, Any]:
    plan = load_plan(plan_path)
    prepare_run_dir(run_dir, force)
    jobs = [
        AblationJob(
            name=run.name,
            seed=seed,
            run_dir=os.path.join(run_dir, f"{run.name}-seed{seed}"),
            overrides=plan.overrides + run.overrides,
        )
        for run in plan.runs
        for seed in plan.seeds
    ]
    logger.info(f"[ABLATE] {len(jobs)} job(s) from {plan_path}")
    summary_path = os.path.join(run_dir, SUMMARY_NAME)
    for job in jobs:
        run_job(job, plan.base, force)
        with open(summary_path, "w") as f:
            json.dump(summarize_jobs(jobs), f, indent=2)
    summary = summarize_jobs(jobs)
    jobs_frame(jobs).to_csv(os.path.join(run_dir, JOBS_CSV_NAME), index=False)
    logger.info(f"[ABLATE] ordering by mean accuracy: {summary['ordering']}")
    return summary
