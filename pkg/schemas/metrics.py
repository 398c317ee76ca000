from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Any

from pydantic import BaseModel, Field

METRICS_COLUMNS = [
    "step",
    "loss",
    "grad_norm_sq",
    "bits_per_param",
    "rounds_full",
    "rounds_onebit",
    "lr",
    "synced",
    "var_updated",
]


@dataclass(frozen=True)
class MetricsRecord:
    """One CSV row. ``grad_norm_sq`` is taken at the worker-averaged model."""

    step: int
    loss: float
    grad_norm_sq: float
    bits_per_param: float
    rounds_full: int
    rounds_onebit: int
    lr: float
    synced: int
    var_updated: int

    def as_row(self) -> dict[str, Any]:
        return asdict(self)


class RunSummary(BaseModel):
    name: str
    algorithm: str
    steps: int
    final_loss: float
    mean_grad_norm_sq_last_k: float
    k: int
    bits_per_param: float
    rounds_full: int
    rounds_onebit: int
    rounds_total: int
    predicted_bits_per_param: float
    predicted_rounds: int
    volume_delta_bits: int
    bits_ratio_vs_full_precision: float
    round_ratio_vs_baseline: float
    variance_updates: int
    sync_rounds: int
    diagnostics: list[str] = Field(default_factory=list)


class CheckResult(BaseModel):
    suite: str
    name: str
    passed: bool
    measured: float | None = None
    threshold: float | None = None
    margin: float | None = None
    detail: str = ""


class VerificationReport(BaseModel):
    passed: bool
    checks: list[CheckResult]

    @classmethod
    def from_checks(cls, checks: list[CheckResult]) -> "VerificationReport":
        return cls(passed=all(c.passed for c in checks), checks=checks)

    def failures(self) -> list[CheckResult]:
        return [c for c in self.checks if not c.passed]
