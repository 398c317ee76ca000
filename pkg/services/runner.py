"""
Experiment runner: turns a ``RunConfig`` into schedules, an oracle and a
worker fleet, drives the selected step function for T steps and writes the
per-step CSV, the JSON summary and a Prometheus text file.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import pandas as pd

from config import SimulatorSettings, get_settings
from core.errors import ConfigError, NumericalError, ScheduleError
from core.logging_config import get_logger
from core.types import ParamVector, SharedOptState, WorkerState, ensure_finite, mean_left_fold
from engine.collectives import FULL_PRECISION_BITS, Communicator
from engine.optimizers import STEP_FUNCTIONS, AlgorithmKind, theoretical_lr
from engine.problems import GradientOracle, build_oracle
from engine.schedules import (
    ScheduleSet,
    build_sync_schedule,
    build_variance_schedule,
    complement,
    predicted_volume,
    prefix_schedule,
)
from observability.metrics import RunMetrics
from schemas.metrics import METRICS_COLUMNS, MetricsRecord, RunSummary
from schemas.run_config import RunConfig, dump_run_config

logger = get_logger(__name__)

Observer = Callable[[MetricsRecord, "Simulation"], None]


# ---------------------------------------------------------------------------
# Schedules
# ---------------------------------------------------------------------------

def plan_schedules(config: RunConfig, oracle: GradientOracle | None = None) -> ScheduleSet:
    """Build T_v, T_u and the learning-rate schedule the algorithm kind calls for."""
    hyper = config.algorithm.hyper
    T = hyper.T
    params = config.schedules
    kind = config.algorithm.kind
    h_bound: int | None = None

    if kind in (AlgorithmKind.ADAM, AlgorithmKind.DISTRIBUTED_ADAM):
        t_v: tuple[int, ...] = tuple(range(T))
        t_u: tuple[int, ...] = ()
    elif kind is AlgorithmKind.ONEBIT_ADAM:
        if params.variance.steps is not None:
            t_v = tuple(sorted(set(params.variance.steps)))
        else:
            prefix = params.variance.full_precision_steps
            t_v = prefix_schedule(max(1, T // 8) if prefix is None else prefix, T)
        t_u = complement(t_v, T)
    else:
        sync = params.sync
        if sync.steps is not None:
            t_u = tuple(sorted(set(sync.steps)))
        else:
            t_u = build_sync_schedule(sync.warmup_steps, sync.doubling_period, sync.clip, T)
        h_bound = sync.clip
        if params.variance.steps is not None:
            t_v = tuple(sorted(set(params.variance.steps)))
        else:
            t_v = build_variance_schedule(params.variance.kappa, T, config.couples_variance, t_u)

    lr_kind, lr_params = _resolve_lr(config, oracle, len(t_v))
    schedules = ScheduleSet(t_v=t_v, t_u=t_u, T=T, lr_kind=lr_kind, lr_params=lr_params, h_bound=h_bound)
    config.algorithm.check_schedules(schedules)
    return schedules


def _resolve_lr(config: RunConfig, oracle: GradientOracle | None, variance_updates: int) -> tuple[str, dict]:
    lr = config.schedules.lr
    if lr.theory is None:
        return lr.kind, dict(lr.params)
    hyper = config.algorithm.hyper
    g_inf = lr.theory_g_inf if lr.theory_g_inf is not None else hyper.g_inf_clip
    if g_inf is None:
        raise ConfigError("theoretical learning rate needs theory_g_inf or g_inf_clip")
    if oracle is None:
        oracle = build_oracle(config.problem, hyper, config.seed)
    gamma = theoretical_lr(
        lr.theory, hyper, oracle.known_L, config.problem.sigma, g_inf, hyper.T, hyper.n,
        freeze_count=variance_updates,
    )
    return "constant", {"gamma": gamma}


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

@dataclass
class SimulationResult:
    records: list[MetricsRecord]
    summary: RunSummary
    schedules: ScheduleSet
    metrics: RunMetrics = field(repr=False)


class Simulation:
    """
    Owns the worker states, the shared optimizer state and the communicator
    for one run. ``step`` advances exactly one optimizer step.
    """

    def __init__(
        self,
        config: RunConfig,
        oracle: GradientOracle | None = None,
        schedules: ScheduleSet | None = None,
        worker_threads: int = 1,
    ) -> None:
        self.config = config
        self.hyper = config.algorithm.hyper
        self.oracle = oracle or build_oracle(config.problem, self.hyper, config.seed)
        if self.oracle.d != self.hyper.d or self.oracle.n_workers != self.hyper.n:
            raise ConfigError(
                f"oracle has d={self.oracle.d}, n={self.oracle.n_workers}; "
                f"config has d={self.hyper.d}, n={self.hyper.n}"
            )
        self.schedules = schedules or plan_schedules(config, self.oracle)
        config.algorithm.check_schedules(self.schedules)
        self.comm = Communicator(self.hyper.n, self.hyper.d)

        x0 = self.oracle.initial_point()
        self.workers = [WorkerState.initial(i, x0, rng_seed=config.seed) for i in range(self.hyper.n)]
        self.shared = SharedOptState.initial(self.hyper.d)
        self.records: list[MetricsRecord] = []
        self.metrics = RunMetrics(config.name, config.algorithm.kind.value)
        self.t = 0
        self.worker_threads = worker_threads
        self._pool: ThreadPoolExecutor | None = None
        self._step_fn = STEP_FUNCTIONS[config.algorithm.kind]

        if self.hyper.g_inf_clip is not None:
            self.shared.diagnostics.append(
                f"gradients clipped to G_inf={self.hyper.g_inf_clip}; the oracle is biased where clipping is active"
            )
        if config.algorithm.kind is AlgorithmKind.ZEROONE_ADAM and not self.schedules.t_v:
            self.shared.diagnostics.append(
                "T_v is empty: the variance stays 0 and every step is scaled by 1/sqrt(eps); "
                "check sync.warmup_steps and variance.couple_to_sync"
            )
            logger.warning("empty_variance_schedule", name=config.name, T=self.hyper.T, sync_steps=len(self.schedules.t_u))
        if config.schedules.lr.theory is not None and not self.hyper.within_freeze_budget(self.schedules.m):
            self.shared.diagnostics.append(
                f"|T_v|={self.schedules.m} exceeds log(1-beta1)/log(beta2)={self.hyper.freeze_budget():.1f}; "
                "the theoretical learning rate is outside its guarantee"
            )

    # ------------------------------------------------------------------

    def gradients(self, t: int) -> list[ParamVector]:
        if self._pool is None:
            return [self.oracle.grad(w.worker_id, t, w.x) for w in self.workers]
        return list(self._pool.map(lambda w: self.oracle.grad(w.worker_id, t, w.x), self.workers))

    def averaged_model(self) -> ParamVector:
        return mean_left_fold([w.x for w in self.workers])

    def step(self) -> MetricsRecord:
        t = self.t
        T = self.hyper.T
        if t >= T:
            raise ScheduleError(f"run already finished all {T} steps")

        grads = self.gradients(t)
        for i, g in enumerate(grads):
            ensure_finite(g, f"grad[{i}]", t)

        ledger = self.comm.ledger
        onebit_before = ledger.rounds_onebit
        variance_before = self.shared.variance_updates
        self._step_fn(t, self.workers, grads, self.shared, self.schedules, self.config.algorithm, self.comm)
        for w in self.workers:
            w.check_finite(t)
        self.shared.check_finite(t)

        x_avg = self.averaged_model()
        full = self.oracle.full_grad(x_avg)
        record = MetricsRecord(
            step=t,
            loss=self.oracle.loss(x_avg),
            grad_norm_sq=float(np.dot(full, full)),
            bits_per_param=ledger.bits_per_param(T),
            rounds_full=ledger.rounds_full,
            rounds_onebit=ledger.rounds_onebit,
            lr=self.schedules.lr(t),
            synced=int(ledger.rounds_onebit > onebit_before),
            var_updated=int(self.shared.variance_updates > variance_before),
        )
        if not (np.isfinite(record.loss) and np.isfinite(record.grad_norm_sq)):
            raise NumericalError("non-finite loss at the averaged model", step=t, field="loss")

        self.records.append(record)
        self.metrics.observe(record)
        self.t = t + 1
        return record

    def run(self, observer: Observer | None = None) -> SimulationResult:
        logger.info(
            "run_started",
            name=self.config.name,
            algorithm=self.config.algorithm.kind.value,
            T=self.hyper.T,
            n=self.hyper.n,
            d=self.hyper.d,
            variance_steps=self.schedules.m,
            sync_steps=len(self.schedules.t_u),
        )
        if self.worker_threads > 1:
            self._pool = ThreadPoolExecutor(max_workers=self.worker_threads, thread_name_prefix="worker")
        try:
            while self.t < self.hyper.T:
                record = self.step()
                if observer is not None:
                    observer(record, self)
        finally:
            if self._pool is not None:
                self._pool.shutdown(wait=True)
                self._pool = None

        summary = self.summarize()
        logger.info(
            "run_finished",
            name=summary.name,
            final_loss=summary.final_loss,
            bits_per_param=summary.bits_per_param,
            rounds_total=summary.rounds_total,
            volume_delta_bits=summary.volume_delta_bits,
        )
        return SimulationResult(records=self.records, summary=summary, schedules=self.schedules, metrics=self.metrics)

    def summarize(self) -> RunSummary:
        if not self.records:
            raise ScheduleError("no steps have been executed")
        T = self.hyper.T
        ledger = self.comm.ledger
        predicted = predicted_volume(self.schedules, self.hyper.d)
        k = min(self.config.metrics_tail, len(self.records))
        tail = [r.grad_norm_sq for r in self.records[-k:]]
        bits_per_param = ledger.bits_per_param(T)
        return RunSummary(
            name=self.config.name,
            algorithm=self.config.algorithm.kind.value,
            steps=len(self.records),
            final_loss=self.records[-1].loss,
            mean_grad_norm_sq_last_k=float(np.mean(tail)),
            k=k,
            bits_per_param=bits_per_param,
            rounds_full=ledger.rounds_full,
            rounds_onebit=ledger.rounds_onebit,
            rounds_total=ledger.rounds_total,
            predicted_bits_per_param=predicted.bits_per_param,
            predicted_rounds=predicted.rounds,
            volume_delta_bits=ledger.bits_sent_per_worker - predicted.total_bits_per_worker,
            bits_ratio_vs_full_precision=bits_per_param / (2 * FULL_PRECISION_BITS),
            round_ratio_vs_baseline=ledger.rounds_total / T,
            variance_updates=self.shared.variance_updates,
            sync_rounds=self.shared.sync_rounds,
            diagnostics=list(self.shared.diagnostics),
        )


# ---------------------------------------------------------------------------
# Artifacts
# ---------------------------------------------------------------------------

def resolve_output_dir(config: RunConfig, out_dir: str | Path | None, settings: SimulatorSettings) -> Path:
    if out_dir is not None:
        return Path(out_dir)
    if settings.output_dir is not None:
        return settings.output_dir
    if config.output.dir is not None:
        return Path(config.output.dir)
    return Path("runs") / config.name


def write_metrics_csv(records: list[MetricsRecord], path: Path) -> None:
    frame = pd.DataFrame([r.as_row() for r in records], columns=METRICS_COLUMNS)
    frame.to_csv(path, index=False, lineterminator="\n")


def write_summary(summary: RunSummary, path: Path) -> None:
    path.write_text(json.dumps(summary.model_dump(mode="json"), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def run_experiment(
    config: RunConfig,
    out_dir: str | Path | None = None,
    settings: SimulatorSettings | None = None,
) -> RunSummary:
    settings = settings or get_settings()
    target = resolve_output_dir(config, out_dir, settings)
    target.mkdir(parents=True, exist_ok=True)

    result = Simulation(config, worker_threads=settings.worker_threads).run()

    write_metrics_csv(result.records, target / config.output.metrics_file)
    write_summary(result.summary, target / config.output.summary_file)
    dump_run_config(config, target / "config.yaml")
    result.metrics.write(target / config.output.prometheus_file)
    logger.info("artifacts_written", out_dir=str(target))
    return result.summary
