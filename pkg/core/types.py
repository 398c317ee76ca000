"""
Numeric vector type and the optimizer state containers shared by every module.

A ``ParamVector`` is a one-dimensional float64 numpy array. Operations never
mutate their inputs; every public function returns a fresh array, so a state
container can be handed to another thread once a step has finished.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field, field_validator

from core.errors import DimensionMismatchError, NonPositiveDenominatorError, NumericalError

ParamVector = npt.NDArray[np.float64]


# ---------------------------------------------------------------------------
# Construction and validation
# ---------------------------------------------------------------------------

def as_param_vector(values: Iterable[float] | npt.ArrayLike, d: int | None = None) -> ParamVector:
    """Copy ``values`` into a finite float64 vector, optionally checking its length."""
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.ndim != 1:
        raise DimensionMismatchError(f"expected a 1-d vector, got shape {arr.shape}")
    if d is not None and arr.shape[0] != d:
        raise DimensionMismatchError(f"expected length {d}, got {arr.shape[0]}")
    ensure_finite(arr, "vector")
    return arr


def zeros(d: int) -> ParamVector:
    return np.zeros(d, dtype=np.float64)


def ensure_finite(vec: ParamVector, name: str, step: int | None = None) -> None:
    if not np.all(np.isfinite(vec)):
        raise NumericalError(f"non-finite entry in {name}", step=step, field=name)


def check_same_length(*vectors: ParamVector) -> int:
    lengths = {v.shape[0] for v in vectors}
    if len(lengths) != 1:
        raise DimensionMismatchError(f"vector lengths differ: {sorted(lengths)}")
    return lengths.pop()


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------

class VectorOp(str, Enum):
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    DIV = "div"
    SQRT = "sqrt"
    SQRT_DIV = "sqrt_div"  # a / sqrt(b)


def vector_elementwise(kind: VectorOp | str, a: ParamVector, b: ParamVector | None = None) -> ParamVector:
    op = VectorOp(kind)
    if op is VectorOp.SQRT:
        if b is not None:
            check_same_length(a, b)
        if np.any(a < 0):
            raise NonPositiveDenominatorError("sqrt of a negative entry")
        out = np.sqrt(a)
    else:
        if b is None:
            raise DimensionMismatchError(f"{op.value} needs two operands")
        check_same_length(a, b)
        if op is VectorOp.ADD:
            out = a + b
        elif op is VectorOp.SUB:
            out = a - b
        elif op is VectorOp.MUL:
            out = a * b
        elif op is VectorOp.DIV:
            if np.any(b <= 0):
                raise NonPositiveDenominatorError("nonpositive denominator entry")
            out = a / b
        else:
            if np.any(b <= 0):
                raise NonPositiveDenominatorError("nonpositive entry under sqrt-division")
            out = a / np.sqrt(b)
    ensure_finite(out, f"vector_elementwise[{op.value}]")
    return out


def effective_lr_vector(gamma: float, v: ParamVector, eps: float) -> ParamVector:
    """γ / sqrt(v + ε) elementwise, ε inside the square root."""
    return gamma / np.sqrt(v + eps)


def mean_left_fold(vectors: Sequence[ParamVector]) -> ParamVector:
    """(1/n)Σ vectors, summed in ascending index order."""
    acc = vectors[0].copy()
    for vec in vectors[1:]:
        acc = acc + vec
    return acc / len(vectors)


# ---------------------------------------------------------------------------
# Hyperparameters
# ---------------------------------------------------------------------------

class MomentumOrder(str, Enum):
    PRE = "pre"    # model and buffer use m_t
    POST = "post"  # model and buffer use the freshly updated momentum


class HyperParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    eps: float = Field(default=1e-8, gt=0.0)
    n: int = Field(default=4, ge=1, description="Worker count.")
    d: int = Field(default=16, ge=1, description="Problem dimension.")
    T: int = Field(default=1000, ge=1, description="Total number of steps.")
    g_inf_clip: float | None = Field(default=None, gt=0.0, description="G∞ clipping threshold.")
    momentum_order: MomentumOrder = MomentumOrder.PRE

    @field_validator("momentum_order", mode="before")
    @classmethod
    def _lower(cls, value: object) -> object:
        return value.lower() if isinstance(value, str) else value

    def freeze_budget(self) -> float:
        """log(1−β₁)/log(β₂): the largest |T_v| the convergence theorems allow."""
        if self.beta1 == 0.0:
            return 0.0
        if self.beta2 == 0.0:
            return 0.0
        return math.log(1.0 - self.beta1) / math.log(self.beta2)

    def within_freeze_budget(self, variance_updates: int) -> bool:
        return variance_updates <= self.freeze_budget()


# ---------------------------------------------------------------------------
# State containers
# ---------------------------------------------------------------------------

@dataclass
class WorkerState:
    worker_id: int
    x: ParamVector
    m: ParamVector
    u: ParamVector
    delta_worker: ParamVector
    rng_seed: int
    x_anchor: ParamVector  # model right after the last sync, x_{t'}

    @classmethod
    def initial(cls, worker_id: int, x0: ParamVector, rng_seed: int) -> "WorkerState":
        d = x0.shape[0]
        return cls(
            worker_id=worker_id,
            x=x0.copy(),
            m=zeros(d),
            u=zeros(d),
            delta_worker=zeros(d),
            rng_seed=rng_seed,
            x_anchor=x0.copy(),
        )

    def check_finite(self, step: int) -> None:
        for name in ("x", "m", "u", "delta_worker"):
            ensure_finite(getattr(self, name), f"worker[{self.worker_id}].{name}", step)


@dataclass
class SharedOptState:
    v: ParamVector
    delta_server: ParamVector
    last_sync: int = 0
    step: int = 0
    window_start: int = 0
    window_lr_sum: float = 0.0
    variance_updates: int = 0
    sync_rounds: int = 0
    diagnostics: list[str] = field(default_factory=list)

    @classmethod
    def initial(cls, d: int) -> "SharedOptState":
        return cls(v=zeros(d), delta_server=zeros(d))

    def check_finite(self, step: int) -> None:
        ensure_finite(self.v, "shared.v", step)
        ensure_finite(self.delta_server, "shared.delta_server", step)
        if np.any(self.v < 0):
            raise NumericalError("negative variance entry", step=step, field="shared.v")
