"""
Synthetic problems with seeded stochastic gradient oracles.

Every oracle is stateless: the gradient drawn by worker i at step t is a pure
function of (seed, i, t, x), so oracles can be called from several threads at
once and runs are reproducible for any worker count.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import Iterable

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from core.errors import ConfigError
from core.logging_config import get_logger
from core.types import HyperParams, ParamVector, as_param_vector
from engine.compression import compression_error_sq, omega_bound
from engine.schedules import ScheduleSet

logger = get_logger(__name__)

_NOISE_STREAM = 0
_BATCH_STREAM = 1
_DATA_STREAM = 2


class ProblemKind(str, Enum):
    QUADRATIC = "quadratic"
    LOGISTIC = "logistic"
    MLP_TINY = "mlp_tiny"


class GradientOracle(ABC):
    kind: ProblemKind

    def __init__(
        self,
        d: int,
        n_workers: int,
        sigma: float,
        seed: int,
        g_inf_clip: float | None = None,
    ) -> None:
        if sigma < 0:
            raise ConfigError(f"sigma must be >= 0, got {sigma}")
        self.d = d
        self.n_workers = n_workers
        self.sigma = sigma
        self.seed = seed
        self.g_inf_clip = g_inf_clip
        if g_inf_clip is not None:
            logger.info("gradient_clipping_enabled", g_inf=g_inf_clip, note="clipping biases the oracle")

    # ------------------------------------------------------------------
    # Problem-specific pieces
    # ------------------------------------------------------------------

    @property
    @abstractmethod
    def known_L(self) -> float: ...

    @abstractmethod
    def loss(self, x: ParamVector) -> float:
        """Noise-free objective, reported as f(x) − f* where f* is known."""

    @abstractmethod
    def full_grad(self, x: ParamVector) -> ParamVector:
        """Noise-free ∇f(x)."""

    @abstractmethod
    def _sample_grad(self, worker_id: int, t: int, x: ParamVector) -> ParamVector:
        """Unclipped stochastic gradient before additive noise."""

    def initial_point(self) -> ParamVector:
        return np.zeros(self.d)

    # ------------------------------------------------------------------
    # Shared machinery
    # ------------------------------------------------------------------

    def rng(self, worker_id: int, t: int, stream: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, worker_id, t, stream])

    def noise(self, worker_id: int, t: int) -> ParamVector:
        if self.sigma == 0:
            return np.zeros(self.d)
        std = self.sigma / math.sqrt(self.d)
        return self.rng(worker_id, t, _NOISE_STREAM).normal(0.0, std, size=self.d)

    def grad(self, worker_id: int, t: int, x: ParamVector) -> ParamVector:
        g = self._sample_grad(worker_id, t, x) + self.noise(worker_id, t)
        if self.g_inf_clip is not None:
            g = np.clip(g, -self.g_inf_clip, self.g_inf_clip)
        return g


def grad(oracle: GradientOracle, worker_id: int, t: int, x: ParamVector) -> ParamVector:
    return oracle.grad(worker_id, t, x)


def loss(oracle: GradientOracle, x: ParamVector) -> float:
    return oracle.loss(x)


def full_grad(oracle: GradientOracle, x: ParamVector) -> ParamVector:
    return oracle.full_grad(x)


# ---------------------------------------------------------------------------
# Quadratic
# ---------------------------------------------------------------------------

class QuadraticOracle(GradientOracle):
    """f(x) = ½xᵀAx − bᵀx with diagonal A; gradient noise is N(0, σ²/d·I)."""

    kind = ProblemKind.QUADRATIC

    def __init__(
        self,
        diag: ParamVector,
        b: ParamVector,
        n_workers: int,
        sigma: float,
        seed: int,
        g_inf_clip: float | None = None,
    ) -> None:
        diag = as_param_vector(diag)
        b = as_param_vector(b, diag.shape[0])
        if np.any(diag <= 0):
            raise ConfigError("quadratic curvature must be positive definite")
        super().__init__(diag.shape[0], n_workers, sigma, seed, g_inf_clip)
        self.diag = diag
        self.b = b
        self.x_star = b / diag

    @classmethod
    def random(
        cls,
        d: int,
        n_workers: int,
        sigma: float,
        seed: int,
        mu: float = 0.1,
        L: float = 1.0,
        g_inf_clip: float | None = None,
    ) -> "QuadraticOracle":
        if not 0 < mu <= L:
            raise ConfigError(f"need 0 < mu <= L, got mu={mu}, L={L}")
        diag = np.linspace(mu, L, d) if d > 1 else np.array([L])
        b = np.random.default_rng([seed, _DATA_STREAM]).normal(0.0, 1.0, size=d)
        return cls(diag, b, n_workers, sigma, seed, g_inf_clip)

    @property
    def known_L(self) -> float:
        return float(self.diag.max())

    def loss(self, x: ParamVector) -> float:
        diff = x - self.x_star
        return 0.5 * float(np.dot(diff * self.diag, diff))

    def full_grad(self, x: ParamVector) -> ParamVector:
        return self.diag * x - self.b

    def _sample_grad(self, worker_id: int, t: int, x: ParamVector) -> ParamVector:
        return self.full_grad(x)


# ---------------------------------------------------------------------------
# Logistic regression
# ---------------------------------------------------------------------------

class LogisticOracle(GradientOracle):
    """
    Binary logistic regression on linearly separable synthetic data. Worker i
    owns samples j ≡ i (mod n) and draws minibatches from its shard.
    """

    kind = ProblemKind.LOGISTIC

    def __init__(
        self,
        d: int,
        n_workers: int,
        sigma: float,
        seed: int,
        n_samples: int = 512,
        batch_size: int = 16,
        l2: float = 0.0,
        g_inf_clip: float | None = None,
    ) -> None:
        super().__init__(d, n_workers, sigma, seed, g_inf_clip)
        if n_samples % n_workers != 0:
            raise ConfigError(f"n_samples={n_samples} must be divisible by the worker count {n_workers}")
        rng = np.random.default_rng([seed, _DATA_STREAM])
        self.features = rng.normal(0.0, 1.0 / math.sqrt(d), size=(n_samples, d))
        planted = rng.normal(0.0, 1.0, size=d)
        margins = self.features @ planted
        self.labels = np.where(margins >= 0.0, 1.0, -1.0)
        self.planted = planted
        self.batch_size = batch_size
        self.l2 = l2
        self.shards = [np.arange(i, n_samples, n_workers) for i in range(n_workers)]
        top = float(np.linalg.eigvalsh(self.features.T @ self.features).max())
        self._L = top / (4.0 * n_samples) + l2

    @property
    def known_L(self) -> float:
        return self._L

    def _losses(self, x: ParamVector, idx: np.ndarray | None = None) -> np.ndarray:
        a = self.features if idx is None else self.features[idx]
        y = self.labels if idx is None else self.labels[idx]
        return np.logaddexp(0.0, -y * (a @ x))

    def _grad_on(self, x: ParamVector, idx: np.ndarray | None) -> ParamVector:
        a = self.features if idx is None else self.features[idx]
        y = self.labels if idx is None else self.labels[idx]
        z = -y * (a @ x)
        weights = -y * np.exp(-np.logaddexp(0.0, -z))  # −y·σ(z)
        return a.T @ weights / a.shape[0] + self.l2 * x

    def loss(self, x: ParamVector) -> float:
        return float(self._losses(x).mean()) + 0.5 * self.l2 * float(np.dot(x, x))

    def full_grad(self, x: ParamVector) -> ParamVector:
        return self._grad_on(x, None)

    def _sample_grad(self, worker_id: int, t: int, x: ParamVector) -> ParamVector:
        shard = self.shards[worker_id]
        picks = self.rng(worker_id, t, _BATCH_STREAM).integers(0, shard.shape[0], size=self.batch_size)
        return self._grad_on(x, shard[picks])


# ---------------------------------------------------------------------------
# Tiny MLP regression
# ---------------------------------------------------------------------------

class TinyMLPOracle(GradientOracle):
    """
    One hidden tanh layer, scalar output, squared loss on data produced by a
    planted network of the same shape (so f* = 0). Parameters are packed as
    [W1 (h×p), b1 (h), w2 (h), b2].
    """

    kind = ProblemKind.MLP_TINY

    def __init__(
        self,
        input_dim: int,
        hidden: int,
        n_workers: int,
        sigma: float,
        seed: int,
        n_samples: int = 256,
        batch_size: int = 16,
        g_inf_clip: float | None = None,
    ) -> None:
        d = self.dimension(input_dim, hidden)
        super().__init__(d, n_workers, sigma, seed, g_inf_clip)
        if n_samples % n_workers != 0:
            raise ConfigError(f"n_samples={n_samples} must be divisible by the worker count {n_workers}")
        self.p = input_dim
        self.h = hidden
        rng = np.random.default_rng([seed, _DATA_STREAM])
        self.inputs = rng.normal(0.0, 1.0, size=(n_samples, input_dim))
        self.planted = rng.normal(0.0, 1.0 / math.sqrt(input_dim), size=d)
        self.targets = self._forward(self.planted, self.inputs)[0]
        self.batch_size = batch_size
        self.shards = [np.arange(i, n_samples, n_workers) for i in range(n_workers)]
        self._x0 = rng.normal(0.0, 0.5 / math.sqrt(input_dim), size=d)
        self._L = self._estimate_L(rng)

    @staticmethod
    def dimension(input_dim: int, hidden: int) -> int:
        return hidden * input_dim + 2 * hidden + 1

    def _unpack(self, x: ParamVector) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
        hp = self.h * self.p
        w1 = x[:hp].reshape(self.h, self.p)
        b1 = x[hp:hp + self.h]
        w2 = x[hp + self.h:hp + 2 * self.h]
        return w1, b1, w2, float(x[-1])

    def _forward(self, x: ParamVector, inputs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        w1, b1, w2, b2 = self._unpack(x)
        hidden = np.tanh(inputs @ w1.T + b1)
        return hidden @ w2 + b2, hidden

    def _grad_on(self, x: ParamVector, idx: np.ndarray | None) -> ParamVector:
        inputs = self.inputs if idx is None else self.inputs[idx]
        targets = self.targets if idx is None else self.targets[idx]
        _, _, w2, _ = self._unpack(x)
        pred, hidden = self._forward(x, inputs)
        resid = (pred - targets) / inputs.shape[0]
        g_w2 = hidden.T @ resid
        g_b2 = resid.sum()
        back = np.outer(resid, w2) * (1.0 - hidden * hidden)
        g_w1 = back.T @ inputs
        g_b1 = back.sum(axis=0)
        return np.concatenate([g_w1.ravel(), g_b1, g_w2, [g_b2]])

    def _estimate_L(self, rng: np.random.Generator, pairs: int = 32) -> float:
        best = 0.0
        for _ in range(pairs):
            x = self._x0 + rng.normal(0.0, 0.1, size=self.d)
            y = x + rng.normal(0.0, 1e-3, size=self.d)
            ratio = np.linalg.norm(self.full_grad(x) - self.full_grad(y)) / np.linalg.norm(x - y)
            best = max(best, float(ratio))
        return best

    @property
    def known_L(self) -> float:
        return self._L

    def initial_point(self) -> ParamVector:
        return self._x0.copy()

    def loss(self, x: ParamVector) -> float:
        pred, _ = self._forward(x, self.inputs)
        return 0.5 * float(np.mean((pred - self.targets) ** 2))

    def full_grad(self, x: ParamVector) -> ParamVector:
        return self._grad_on(x, None)

    def _sample_grad(self, worker_id: int, t: int, x: ParamVector) -> ParamVector:
        shard = self.shards[worker_id]
        picks = self.rng(worker_id, t, _BATCH_STREAM).integers(0, shard.shape[0], size=self.batch_size)
        return self._grad_on(x, shard[picks])




# ---------------------------------------------------------------------------
# Assumption checks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AssumptionCheck:
    name: str
    passed: bool
    measured: float
    threshold: float
    detail: str = ""


def check_unbiased(oracle: GradientOracle, x: ParamVector, draws: int = 100_000, worker_id: int = 0) -> AssumptionCheck:
    """Largest coordinate of the mean noise over ``draws`` steps must stay within 5σ/√draws."""
    exact = oracle.full_grad(x)
    acc = np.zeros(oracle.d)
    for t in range(draws):
        acc = acc + (oracle.grad(worker_id, t, x) - exact)
    measured = float(np.abs(acc / draws).max())
    threshold = 5.0 * oracle.sigma / math.sqrt(draws)
    return AssumptionCheck("unbiased", measured <= threshold, measured, threshold, f"draws={draws}")


def check_variance(
    oracle: GradientOracle,
    x: ParamVector,
    n: int,
    draws: int = 10_000,
    rel_tol: float = 0.2,
) -> AssumptionCheck:
    """Variance of the n-worker averaged gradient against σ²/n."""
    if n > oracle.n_workers:
        raise ConfigError(f"oracle has {oracle.n_workers} workers, asked to average {n}")
    exact = oracle.full_grad(x)
    total = 0.0
    for t in range(draws):
        acc = oracle.grad(0, t, x)
        for i in range(1, n):
            acc = acc + oracle.grad(i, t, x)
        diff = acc / n - exact
        total += float(np.dot(diff, diff))
    measured = total / draws
    expected = oracle.sigma ** 2 / n
    rel = abs(measured / expected - 1.0) if expected > 0 else measured
    return AssumptionCheck(
        f"variance_n{n}", rel <= rel_tol, measured, expected, f"relative deviation {rel:.4f}, tolerance {rel_tol}"
    )


def check_lipschitz(oracle: GradientOracle, pairs: int = 200, seed: int = 0, scale: float = 1.0) -> AssumptionCheck:
    rng = np.random.default_rng([seed, _DATA_STREAM, 7])
    worst = 0.0
    for _ in range(pairs):
        x = rng.normal(0.0, scale, size=oracle.d)
        y = rng.normal(0.0, scale, size=oracle.d)
        gap = float(np.linalg.norm(x - y))
        if gap == 0.0:
            continue
        worst = max(worst, float(np.linalg.norm(oracle.full_grad(x) - oracle.full_grad(y))) / gap)
    threshold = oracle.known_L * (1.0 + 1e-9)
    return AssumptionCheck("lipschitz", worst <= threshold, worst, oracle.known_L, f"pairs={pairs}")


def check_bounded_gradient(oracle: GradientOracle, x: ParamVector, draws: int = 1000) -> AssumptionCheck:
    if oracle.g_inf_clip is None:
        return AssumptionCheck("bounded_gradient", False, math.inf, math.inf, "clipping disabled")
    worst = 0.0
    for t in range(draws):
        for i in range(oracle.n_workers):
            worst = max(worst, float(np.abs(oracle.grad(i, t, x)).max()))
    return AssumptionCheck("bounded_gradient", worst <= oracle.g_inf_clip, worst, oracle.g_inf_clip)


def check_compression_omega(vectors: Iterable[ParamVector]) -> AssumptionCheck:
    """Worst ‖C[x]−x‖²/‖x‖² minus its bound 1−1/d; passes when never positive."""
    worst_excess = -math.inf
    worst_ratio = 0.0
    for x in vectors:
        norm_sq = float(np.dot(x, x))
        if norm_sq == 0.0:
            continue
        ratio = compression_error_sq(x) / norm_sq
        excess = ratio - omega_bound(x.shape[0])
        if excess > worst_excess:
            worst_excess, worst_ratio = excess, ratio
    return AssumptionCheck(
        "compression_omega", worst_excess <= 1e-12, worst_ratio, worst_ratio - worst_excess
    )


def check_local_step_bound(schedules: ScheduleSet, h: int) -> AssumptionCheck:
    first_syncs = bool(schedules.t_u) and schedules.t_u[0] == 0
    passed = first_syncs and schedules.H <= h
    detail = "" if first_syncs else "step 0 is not a sync step"
    return AssumptionCheck("local_step_bound", passed, float(schedules.H), float(h), detail)


# ---------------------------------------------------------------------------
# Construction from config
# ---------------------------------------------------------------------------

class ProblemSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: ProblemKind = ProblemKind.QUADRATIC
    sigma: float = Field(default=1.0, ge=0.0)
    mu: float = Field(default=0.1, gt=0.0, description="Smallest curvature (quadratic).")
    L: float = Field(default=1.0, gt=0.0, description="Largest curvature (quadratic).")
    n_samples: int = Field(default=512, ge=1)
    batch_size: int = Field(default=16, ge=1)
    l2: float = Field(default=0.0, ge=0.0)
    input_dim: int = Field(default=4, ge=1)
    hidden: int = Field(default=8, ge=1)


def build_oracle(spec: ProblemSpec, hyper: HyperParams, seed: int) -> GradientOracle:
    if spec.kind is ProblemKind.QUADRATIC:
        return QuadraticOracle.random(
            hyper.d, hyper.n, spec.sigma, seed, mu=spec.mu, L=spec.L, g_inf_clip=hyper.g_inf_clip
        )
    if spec.kind is ProblemKind.LOGISTIC:
        return LogisticOracle(
            hyper.d,
            hyper.n,
            spec.sigma,
            seed,
            n_samples=spec.n_samples,
            batch_size=spec.batch_size,
            l2=spec.l2,
            g_inf_clip=hyper.g_inf_clip,
        )
    expected = TinyMLPOracle.dimension(spec.input_dim, spec.hidden)
    if hyper.d != expected:
        raise ConfigError(
            f"mlp_tiny with input_dim={spec.input_dim}, hidden={spec.hidden} has d={expected}, config says d={hyper.d}"
        )
    return TinyMLPOracle(
        spec.input_dim,
        spec.hidden,
        hyper.n,
        spec.sigma,
        seed,
        n_samples=spec.n_samples,
        batch_size=spec.batch_size,
        g_inf_clip=hyper.g_inf_clip,
    )
