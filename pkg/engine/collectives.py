"""
Simulated AllReduce and error-feedback 1-bit AllReduce.

Both collectives are barriers: they take all n worker inputs at once and
reduce them in ascending worker order, so the result does not depend on how
the inputs were produced. Every call is charged to a ``CollectiveLedger``
using the logical worker → server → worker form (one upload, one download).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from core.errors import DimensionMismatchError, WorkerCountError
from core.types import ParamVector, mean_left_fold
from engine.compression import SCALE_BITS, CompressorSpec, transmit

FULL_PRECISION_BITS = 16  # FP16 per number on the wire


@dataclass
class CollectiveLedger:
    d: int
    rounds_full: int = 0
    rounds_onebit: int = 0
    bits_sent_per_worker: int = 0
    max_compression_error: float = 0.0

    @property
    def full_round_bits(self) -> int:
        return 2 * FULL_PRECISION_BITS * self.d

    @property
    def onebit_round_bits(self) -> int:
        return 2 * (self.d + SCALE_BITS)

    @property
    def rounds_total(self) -> int:
        return self.rounds_full + self.rounds_onebit

    def record_full(self) -> None:
        self.rounds_full += 1
        self.bits_sent_per_worker += self.full_round_bits

    def record_onebit(self) -> None:
        self.rounds_onebit += 1
        self.bits_sent_per_worker += self.onebit_round_bits

    def bits_per_param(self, T: int) -> float:
        return self.bits_sent_per_worker / (self.d * T)


@dataclass(frozen=True)
class OneBitResult:
    out: ParamVector
    worker_errors: list[ParamVector]
    server_error: ParamVector


class Communicator:
    """Logical n-worker communicator with exact volume accounting."""

    def __init__(self, n_workers: int, d: int) -> None:
        self.n_workers = n_workers
        self.d = d
        self.ledger = CollectiveLedger(d=d)

    def _check_inputs(self, inputs: Sequence[ParamVector]) -> None:
        if len(inputs) != self.n_workers:
            raise WorkerCountError(f"expected {self.n_workers} inputs, got {len(inputs)}")
        for i, vec in enumerate(inputs):
            if vec.shape != (self.d,):
                raise DimensionMismatchError(f"input {i} has shape {vec.shape}, expected ({self.d},)")

    def allreduce(self, inputs: Sequence[ParamVector]) -> ParamVector:
        self._check_inputs(inputs)
        out = mean_left_fold(inputs)
        self.ledger.record_full()
        return out

    def ef_onebit_allreduce(
        self,
        inputs: Sequence[ParamVector],
        worker_errors: Sequence[ParamVector],
        server_error: ParamVector,
        spec: CompressorSpec,
    ) -> OneBitResult:
        self._check_inputs(inputs)
        self._check_inputs(worker_errors)
        if server_error.shape != (self.d,):
            raise DimensionMismatchError(f"server error has shape {server_error.shape}")

        compressed: list[ParamVector] = []
        new_worker_errors: list[ParamVector] = []
        worst = self.ledger.max_compression_error
        for z, delta in zip(inputs, worker_errors):
            corrected = z + delta
            z_hat = transmit(spec, corrected)
            residual = corrected - z_hat
            compressed.append(z_hat)
            new_worker_errors.append(residual)
            worst = max(worst, float(np.linalg.norm(residual)))

        server_in = mean_left_fold(compressed) + server_error
        z_bar = transmit(spec, server_in)
        new_server_error = server_in - z_bar
        worst = max(worst, float(np.linalg.norm(new_server_error)))

        self.ledger.max_compression_error = worst
        self.ledger.record_onebit()
        return OneBitResult(out=z_bar, worker_errors=new_worker_errors, server_error=new_server_error)


def combined_error(worker_errors: Sequence[ParamVector], server_error: ParamVector) -> ParamVector:
    """
    δ = (1/n)Σδ⁽ⁱ⁾ + δ̄, the error term that telescopes across rounds:
    out_t = mean(z_t) + δ_t − δ_{t+1}.
    """
    return mean_left_fold(worker_errors) + server_error
