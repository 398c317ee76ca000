"""
Step functions for baseline Adam, the frozen-variance 1-bit framework (which
covers distributed Adam and 1-bit Adam) and 0/1 Adam, plus the closed-form
learning-rate and momentum bounds from the convergence analysis.

No bias correction is applied and ε sits inside the square root: the model
step is x − γ·m/√(v + ε) with the variance v_t of the current step.
"""

from __future__ import annotations

import math
from enum import Enum
from typing import Callable, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from core.errors import ScheduleError
from core.logging_config import get_logger
from core.types import HyperParams, MomentumOrder, ParamVector, SharedOptState, WorkerState, zeros
from engine.collectives import Communicator
from engine.compression import CompressorSpec
from engine.schedules import ScheduleSet

logger = get_logger(__name__)


class AlgorithmKind(str, Enum):
    ADAM = "adam"
    DISTRIBUTED_ADAM = "distributed_adam"
    ONEBIT_ADAM = "onebit_adam"
    ZEROONE_ADAM = "zeroone_adam"


class BufferMode(str, Enum):
    LR_WEIGHTED = "lr_weighted"  # u += γ_t·m, momentum = ū / Σγ
    PLAIN = "plain"              # u += m, momentum = ū / window length


class AlgorithmConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: AlgorithmKind = AlgorithmKind.ZEROONE_ADAM
    buffer_mode: BufferMode = BufferMode.LR_WEIGHTED
    compressor: CompressorSpec = Field(default_factory=CompressorSpec)
    hyper: HyperParams = Field(default_factory=HyperParams)

    def check_schedules(self, schedules: ScheduleSet) -> None:
        """onebit_adam needs T_v = {0, ..., T₀−1}."""
        if schedules.T != self.hyper.T:
            raise ScheduleError(f"schedule covers {schedules.T} steps, run has T={self.hyper.T}")
        if self.kind is AlgorithmKind.ONEBIT_ADAM and schedules.t_v != tuple(range(len(schedules.t_v))):
            raise ScheduleError("onebit_adam requires T_v to be a prefix {0, ..., T0-1}")


# ---------------------------------------------------------------------------
# Baseline Adam
# ---------------------------------------------------------------------------

def adam_step(
    x: ParamVector,
    m: ParamVector,
    v: ParamVector,
    g: ParamVector,
    gamma: float,
    hyper: HyperParams,
) -> tuple[ParamVector, ParamVector, ParamVector]:
    m_next = hyper.beta1 * m + (1.0 - hyper.beta1) * g
    v_next = hyper.beta2 * v + (1.0 - hyper.beta2) * (g * g)
    m_used = m if hyper.momentum_order is MomentumOrder.PRE else m_next
    x_next = x - gamma * m_used / np.sqrt(v + hyper.eps)
    return x_next, m_next, v_next


def baseline_adam_step(
    t: int,
    workers: Sequence[WorkerState],
    worker_grads: Sequence[ParamVector],
    shared: SharedOptState,
    schedules: ScheduleSet,
    cfg: AlgorithmConfig,
    comm: Communicator,
) -> None:
    """Single-model Adam on the AllReduce-averaged gradient; every worker holds a copy."""
    _check_step_order(t, shared)
    g_bar = comm.allreduce(worker_grads)
    lead = workers[0]
    x, m, shared.v = adam_step(lead.x, lead.m, shared.v, g_bar, schedules.lr(t), cfg.hyper)
    shared.variance_updates += 1
    for w in workers:
        w.x = x.copy()
        w.m = m.copy()
    shared.step = t + 1


# ---------------------------------------------------------------------------
# Frozen-variance framework (distributed Adam, 1-bit Adam)
# ---------------------------------------------------------------------------

def framework_step(
    t: int,
    workers: Sequence[WorkerState],
    worker_grads: Sequence[ParamVector],
    shared: SharedOptState,
    schedules: ScheduleSet,
    cfg: AlgorithmConfig,
    comm: Communicator,
) -> None:
    """
    One step of the generic framework: full-precision AllReduce and a variance
    update on T_v steps, error-feedback 1-bit AllReduce with frozen variance
    otherwise. Updates ``workers`` and ``shared`` in place.
    """
    _check_step_order(t, shared)
    hyper = cfg.hyper
    gamma = schedules.lr(t)
    denom = np.sqrt(shared.v + hyper.eps)

    if schedules.updates_variance(t):
        g_bar = comm.allreduce(worker_grads)
        shared.v = hyper.beta2 * shared.v + (1.0 - hyper.beta2) * (g_bar * g_bar)
        shared.variance_updates += 1
    else:
        result = comm.ef_onebit_allreduce(
            worker_grads,
            [w.delta_worker for w in workers],
            shared.delta_server,
            cfg.compressor,
        )
        g_bar = result.out
        for w, err in zip(workers, result.worker_errors):
            w.delta_worker = err
        shared.delta_server = result.server_error
        shared.sync_rounds += 1

    for w in workers:
        m_next = hyper.beta1 * w.m + (1.0 - hyper.beta1) * g_bar
        m_used = w.m if hyper.momentum_order is MomentumOrder.PRE else m_next
        w.x = w.x - gamma * m_used / denom
        w.m = m_next
    shared.step = t + 1


# ---------------------------------------------------------------------------
# 0/1 Adam
# ---------------------------------------------------------------------------

def zeroone_adam_step(
    t: int,
    workers: Sequence[WorkerState],
    worker_grads: Sequence[ParamVector],
    shared: SharedOptState,
    schedules: ScheduleSet,
    cfg: AlgorithmConfig,
    comm: Communicator,
) -> None:
    """
    One step of 0/1 Adam. Every worker takes a local step and accumulates its
    buffer; on T_u steps the buffers go through the 1-bit AllReduce, each
    worker rebuilds momentum and model from the shared result and the buffer
    is reset. On T_v steps the variance is refreshed from the full-precision
    averaged gradient, after the sync block. Updates state in place.
    """
    _check_step_order(t, shared)
    hyper = cfg.hyper
    gamma = schedules.lr(t)
    v_t = shared.v
    denom = np.sqrt(v_t + hyper.eps)
    plain = cfg.buffer_mode is BufferMode.PLAIN

    for w, g in zip(workers, worker_grads):
        m_half = hyper.beta1 * w.m + (1.0 - hyper.beta1) * g
        m_used = w.m if hyper.momentum_order is MomentumOrder.PRE else m_half
        w.x = w.x - gamma * m_used / denom
        w.u = w.u + (m_used if plain else gamma * m_used)
        w.m = m_half

    shared.window_lr_sum += gamma

    if schedules.syncs(t):
        result = comm.ef_onebit_allreduce(
            [w.u for w in workers],
            [w.delta_worker for w in workers],
            shared.delta_server,
            cfg.compressor,
        )
        u_bar = result.out
        window_len = t - shared.window_start + 1
        if plain:
            m_sync = u_bar / window_len
            x_shift = gamma * u_bar / denom
        else:
            if shared.window_lr_sum == 0.0:
                m_sync = zeros(u_bar.shape[0])
                message = f"step {t}: learning rates sum to 0 over the sync window; momentum reset to 0"
                shared.diagnostics.append(message)
                logger.warning("zero_lr_window", step=t, window_len=window_len)
            else:
                m_sync = u_bar / shared.window_lr_sum
            x_shift = u_bar / denom

        for w, err in zip(workers, result.worker_errors):
            w.x = w.x_anchor - x_shift
            w.m = m_sync.copy()
            w.u = zeros(u_bar.shape[0])
            w.x_anchor = w.x
            w.delta_worker = err
        shared.delta_server = result.server_error
        shared.last_sync = t
        shared.window_start = t + 1
        shared.window_lr_sum = 0.0
        shared.sync_rounds += 1

    if schedules.updates_variance(t):
        g_bar = comm.allreduce(worker_grads)
        shared.v = hyper.beta2 * v_t + (1.0 - hyper.beta2) * (g_bar * g_bar)
        shared.variance_updates += 1

    shared.step = t + 1


StepFunction = Callable[
    [int, Sequence[WorkerState], Sequence[ParamVector], SharedOptState, ScheduleSet, AlgorithmConfig, Communicator],
    None,
]

STEP_FUNCTIONS: dict[AlgorithmKind, StepFunction] = {
    AlgorithmKind.ADAM: baseline_adam_step,
    AlgorithmKind.DISTRIBUTED_ADAM: framework_step,
    AlgorithmKind.ONEBIT_ADAM: framework_step,
    AlgorithmKind.ZEROONE_ADAM: zeroone_adam_step,
}


# ---------------------------------------------------------------------------
# Theory constants
# ---------------------------------------------------------------------------

class TheoryVariant(str, Enum):
    LOCAL01 = "local01"  # 0/1 Adam with local steps
    BASIC01 = "basic01"  # frozen-variance framework without local steps


def theoretical_lr(
    variant: TheoryVariant | str,
    hyper: HyperParams,
    L: float,
    sigma: float,
    g_inf: float,
    T: int,
    n: int,
    freeze_count: int | None = None,
) -> float:
    """Constant learning rate prescribed by the convergence theorems."""
    variant = TheoryVariant(variant)
    if L <= 0 or T <= 0 or n <= 0 or sigma < 0 or g_inf < 0:
        raise ValueError("theoretical_lr needs L, T, n > 0 and sigma, G_inf >= 0")
    if freeze_count is not None and not hyper.within_freeze_budget(freeze_count):
        logger.warning(
            "freeze_budget_exceeded",
            variance_updates=freeze_count,
            budget=hyper.freeze_budget(),
        )

    noise_term = math.inf if sigma == 0 else math.sqrt(n / (sigma * sigma * T))
    root = math.sqrt(g_inf * g_inf + hyper.eps)
    if variant is TheoryVariant.LOCAL01:
        return min(noise_term, 1.0 / (4.0 * L * root), 2.0 * root / L, 1.0 / 6.0)
    return min(noise_term, 1.0 / (2.0 * L * root), 1.0 / 125.0)


def momentum_bound(hyper: HyperParams, g_inf: float, delta: float, d: int) -> float:
    """(3G∞²d + 24Δ²)/(1−β₁)², the uniform bound on ‖m‖²."""
    return (3.0 * g_inf * g_inf * d + 24.0 * delta * delta) / (1.0 - hyper.beta1) ** 2


def _check_step_order(t: int, shared: SharedOptState) -> None:
    if shared.step != t:
        raise ScheduleError(f"step {t} requested but shared state is at step {shared.step}")
