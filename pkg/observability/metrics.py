from __future__ import annotations

from pathlib import Path

from prometheus_client import CollectorRegistry, Counter, Gauge, write_to_textfile

from schemas.metrics import MetricsRecord


class RunMetrics:
    """Per-run Prometheus registry, dumped as a text exposition file at the end of a run."""

    def __init__(self, run_name: str, algorithm: str) -> None:
        self.registry = CollectorRegistry()
        labels = {"run": run_name, "algorithm": algorithm}
        self._steps = Counter(
            "zeroone_steps", "Optimizer steps executed", ["run", "algorithm"], registry=self.registry
        ).labels(**labels)
        rounds = Counter(
            "zeroone_collective_rounds",
            "Collective invocations by kind",
            ["run", "algorithm", "kind"],
            registry=self.registry,
        )
        self._rounds_full = rounds.labels(kind="full", **labels)
        self._rounds_onebit = rounds.labels(kind="onebit", **labels)
        self._bits_per_param = Gauge(
            "zeroone_bits_per_param", "Cumulative bits per parameter", ["run", "algorithm"], registry=self.registry
        ).labels(**labels)
        self._loss = Gauge("zeroone_loss", "Loss at the averaged model", ["run", "algorithm"], registry=self.registry).labels(**labels)
        self._grad_norm_sq = Gauge(
            "zeroone_grad_norm_sq", "Squared gradient norm at the averaged model", ["run", "algorithm"], registry=self.registry
        ).labels(**labels)
        self._last: MetricsRecord | None = None

    def observe(self, record: MetricsRecord) -> None:
        prev_full = self._last.rounds_full if self._last else 0
        prev_onebit = self._last.rounds_onebit if self._last else 0
        self._steps.inc()
        self._rounds_full.inc(record.rounds_full - prev_full)
        self._rounds_onebit.inc(record.rounds_onebit - prev_onebit)
        self._bits_per_param.set(record.bits_per_param)
        self._loss.set(record.loss)
        self._grad_norm_sq.set(record.grad_norm_sq)
        self._last = record

    def sample(self, name: str, **labels: str) -> float | None:
        return self.registry.get_sample_value(name, labels or None)

    def write(self, path: str | Path) -> None:
        write_to_textfile(str(path), self.registry)
