"""
Step-set builders for variance updates (T_v) and synchronization (T_u), the
learning-rate schedules, and the closed-form communication volume they imply.

Learning-rate schedules are stateless: each one is a pure function of the
step index and its parameters.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping

from core.errors import ScheduleError, UnknownScheduleError
from engine.collectives import FULL_PRECISION_BITS
from engine.compression import SCALE_BITS


# ---------------------------------------------------------------------------
# Step sets
# ---------------------------------------------------------------------------

def max_gap(steps: Iterable[int]) -> int:
    ordered = sorted(steps)
    if len(ordered) < 2:
        return 0
    return max(b - a for a, b in zip(ordered, ordered[1:]))


def build_sync_schedule(warmup_steps: int, doubling_period: int, clip: int, T: int) -> tuple[int, ...]:
    """
    Sync every step during warmup; afterwards the interval doubles every
    ``doubling_period`` steps (2, 4, 8, ...) up to ``clip``. Each doubling
    boundary warmup + k·period is itself a sync step.
    """
    if warmup_steps < 0 or doubling_period < 1 or clip < 1:
        raise ScheduleError(
            f"invalid sync schedule: W={warmup_steps}, P={doubling_period}, H={clip}"
        )
    steps: list[int] = []
    t = 0
    while t < T:
        steps.append(t)
        if t < warmup_steps:
            t += 1
            continue
        level = (t - warmup_steps) // doubling_period
        interval = min(clip, 2 ** min(level + 1, 62))
        boundary = warmup_steps + (level + 1) * doubling_period
        t = min(t + interval, boundary)
    return tuple(steps)


def sync_gap_at(t: int, sync_steps: tuple[int, ...], T: int) -> int | None:
    """Length of the sync interval containing step t (None before the first sync)."""
    idx = bisect.bisect_right(sync_steps, t) - 1
    if idx < 0:
        return None
    nxt = sync_steps[idx + 1] if idx + 1 < len(sync_steps) else T
    return nxt - sync_steps[idx]


def build_variance_schedule(
    kappa: int,
    T: int,
    couple_to_sync: bool = False,
    sync_steps: Iterable[int] | None = None,
) -> tuple[int, ...]:
    """k₀ = 0, k_{j+1} = k_j + 2^{⌊j/κ⌋}, truncated at T."""
    if kappa < 1:
        raise ScheduleError(f"kappa must be >= 1, got {kappa}")
    steps: list[int] = []
    k, j = 0, 0
    while k < T:
        steps.append(k)
        k += 2 ** min(j // kappa, 62)
        j += 1
    if couple_to_sync:
        ordered_sync = tuple(sorted(sync_steps or ()))
        steps = [
            t for t in steps
            if (gap := sync_gap_at(t, ordered_sync, T)) is None or gap <= 1
        ]
    return tuple(steps)


def prefix_schedule(length: int, T: int) -> tuple[int, ...]:
    return tuple(range(min(length, T)))


def complement(steps: Iterable[int], T: int) -> tuple[int, ...]:
    taken = set(steps)
    return tuple(t for t in range(T) if t not in taken)


# ---------------------------------------------------------------------------
# Learning-rate schedules
# ---------------------------------------------------------------------------

def constant_lr(t: int, gamma: float) -> float:
    return gamma


def warmup_exp_lr(
    t: int, peak: float, warmup_steps: int, decay: float = 0.99, block: int = 520
) -> float:
    """Linear ramp 0 → peak over the warmup, then ×decay every ``block`` steps."""
    if t < warmup_steps:
        return peak * t / warmup_steps
    return peak * decay ** ((t - warmup_steps) // block)


def milestone_lr(t: int, gamma0: float, milestones: Iterable[int], factor: float = 10.0) -> float:
    passed = sum(1 for step in milestones if t >= step)
    return gamma0 / factor ** passed


def cosine_lr(
    t: int, peak: float, total_steps: int, warmup_steps: int = 0, floor: float = 0.0
) -> float:
    """Linear warmup, then a single cosine cycle from peak down to ``floor``."""
    if t < warmup_steps:
        return peak * t / warmup_steps
    span = max(1, total_steps - warmup_steps)
    progress = min(1.0, (t - warmup_steps) / span)
    return floor + (peak - floor) * 0.5 * (1.0 + math.cos(math.pi * progress))


LR_SCHEDULES: dict[str, Callable[..., float]] = {
    "constant": constant_lr,
    "warmup_exp": warmup_exp_lr,
    "milestone": milestone_lr,
    "cosine": cosine_lr,
}


def lr_schedule(kind: str, params: Mapping[str, Any], t: int) -> float:
    try:
        fn = LR_SCHEDULES[kind]
    except KeyError:
        raise UnknownScheduleError(
            f"unknown learning-rate schedule '{kind}', expected one of {sorted(LR_SCHEDULES)}"
        ) from None
    return fn(t, **params)


# ---------------------------------------------------------------------------
# Schedule set
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScheduleSet:
    t_v: tuple[int, ...]
    t_u: tuple[int, ...]
    T: int
    lr_kind: str = "constant"
    lr_params: Mapping[str, Any] = field(default_factory=lambda: {"gamma": 1e-3})
    h_bound: int | None = None
    _v_members: frozenset[int] = field(init=False, repr=False, compare=False)
    _u_members: frozenset[int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        t_v = tuple(sorted(set(self.t_v)))
        t_u = tuple(sorted(set(self.t_u)))
        for name, steps in (("t_v", t_v), ("t_u", t_u)):
            if steps and (steps[0] < 0 or steps[-1] >= self.T):
                raise ScheduleError(f"{name} has steps outside [0, {self.T})")
        if self.lr_kind not in LR_SCHEDULES:
            raise UnknownScheduleError(f"unknown learning-rate schedule '{self.lr_kind}'")
        object.__setattr__(self, "t_v", t_v)
        object.__setattr__(self, "t_u", t_u)
        object.__setattr__(self, "_v_members", frozenset(t_v))
        object.__setattr__(self, "_u_members", frozenset(t_u))
        if self.h_bound is not None and (not t_u or t_u[0] != 0):
            raise ScheduleError("a bounded sync schedule must sync at step 0")
        if self.h_bound is not None and self.H > self.h_bound:
            raise ScheduleError(f"sync gap {self.H} exceeds the configured bound H={self.h_bound}")

    @property
    def H(self) -> int:
        return max_gap(self.t_u)

    @property
    def m(self) -> int:
        return len(self.t_v)

    def updates_variance(self, t: int) -> bool:
        self._check_step(t)
        return t in self._v_members

    def syncs(self, t: int) -> bool:
        self._check_step(t)
        return t in self._u_members

    def lr(self, t: int) -> float:
        self._check_step(t)
        return lr_schedule(self.lr_kind, self.lr_params, t)

    def _check_step(self, t: int) -> None:
        if not 0 <= t < self.T:
            raise ScheduleError(f"step {t} outside [0, {self.T})")

    def as_dict(self) -> dict[str, Any]:
        return {
            "T": self.T,
            "t_v": list(self.t_v),
            "t_u": list(self.t_u),
            "H": self.H,
            "m": self.m,
            "lr": {"kind": self.lr_kind, "params": dict(self.lr_params)},
        }


# ---------------------------------------------------------------------------
# Closed-form volume
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VolumeEstimate:
    bits_per_param: float
    rounds: int
    rounds_full: int
    rounds_onebit: int
    total_bits_per_worker: int

    def as_dict(self) -> dict[str, Any]:
        return {
            "bits_per_param": self.bits_per_param,
            "rounds": self.rounds,
            "rounds_full": self.rounds_full,
            "rounds_onebit": self.rounds_onebit,
            "total_bits_per_worker": self.total_bits_per_worker,
        }


def predicted_volume(schedules: ScheduleSet, d: int, T: int | None = None) -> VolumeEstimate:
    T = schedules.T if T is None else T
    rounds_full = len(schedules.t_v)
    rounds_onebit = len(schedules.t_u)
    total = rounds_full * 2 * FULL_PRECISION_BITS * d + rounds_onebit * 2 * (d + SCALE_BITS)
    return VolumeEstimate(
        bits_per_param=total / (d * T),
        rounds=rounds_full + rounds_onebit,
        rounds_full=rounds_full,
        rounds_onebit=rounds_onebit,
        total_bits_per_worker=total,
    )
