"""
Run configuration: the YAML file a ``run`` or ``schedule preview`` command
reads. Every field has a default so a minimal file only names what differs.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator

from engine.optimizers import AlgorithmConfig, AlgorithmKind, TheoryVariant
from engine.problems import ProblemSpec


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class VarianceScheduleParams(_Frozen):
    kappa: int = Field(default=16, ge=1, description="Doubling period of the variance-update gaps.")
    couple_to_sync: bool | None = Field(
        default=None,
        description="Drop variance updates inside sync gaps longer than 1. None means on for zeroone_adam.",
    )
    full_precision_steps: int | None = Field(
        default=None, ge=0, description="Length of the full-precision prefix for onebit_adam (default T/8)."
    )
    steps: list[int] | None = Field(default=None, description="Explicit T_v, overrides the builder.")


class SyncScheduleParams(_Frozen):
    warmup_steps: int = Field(default=100, ge=0)
    doubling_period: int = Field(default=100, ge=1)
    clip: int = Field(default=16, ge=1, description="Largest sync interval H.")
    steps: list[int] | None = Field(default=None, description="Explicit T_u, overrides the builder.")


class LrScheduleParams(_Frozen):
    kind: str = "constant"
    params: dict[str, Any] = Field(default_factory=lambda: {"gamma": 1e-3})
    theory: TheoryVariant | None = Field(
        default=None,
        description="Replace the constant γ with the theorem's learning rate for this variant.",
    )
    theory_g_inf: float | None = Field(
        default=None, ge=0.0, description="G∞ used by the theorem; defaults to the clipping threshold."
    )


class ScheduleParams(_Frozen):
    variance: VarianceScheduleParams = Field(default_factory=VarianceScheduleParams)
    sync: SyncScheduleParams = Field(default_factory=SyncScheduleParams)
    lr: LrScheduleParams = Field(default_factory=LrScheduleParams)


class OutputSpec(_Frozen):
    dir: str | None = None
    metrics_file: str = "metrics.csv"
    summary_file: str = "summary.json"
    prometheus_file: str = "metrics.prom"


class RunConfig(_Frozen):
    name: str = "run"
    seed: int = Field(default=0, ge=0)
    algorithm: AlgorithmConfig = Field(default_factory=AlgorithmConfig)
    schedules: ScheduleParams = Field(default_factory=ScheduleParams)
    problem: ProblemSpec = Field(default_factory=ProblemSpec)
    output: OutputSpec = Field(default_factory=OutputSpec)
    metrics_tail: int = Field(default=100, ge=1, description="k for the mean of the last k gradient norms.")

    @field_validator("name")
    @classmethod
    def _name_is_path_safe(cls, value: str) -> str:
        if not value or "/" in value or "\\" in value:
            raise ValueError("name must be a non-empty string without path separators")
        return value

    @property
    def T(self) -> int:
        return self.algorithm.hyper.T

    @property
    def couples_variance(self) -> bool:
        flag = self.schedules.variance.couple_to_sync
        if flag is None:
            return self.algorithm.kind is AlgorithmKind.ZEROONE_ADAM
        return flag


def load_run_config(path: str | Path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    return RunConfig.model_validate(raw)


def dump_run_config(config: RunConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        yaml.safe_dump(config.model_dump(mode="json"), fh, sort_keys=True)
