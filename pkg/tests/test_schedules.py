import pytest

from core.errors import ScheduleError, UnknownScheduleError
from engine.schedules import (
    ScheduleSet,
    build_sync_schedule,
    build_variance_schedule,
    complement,
    cosine_lr,
    lr_schedule,
    max_gap,
    predicted_volume,
    prefix_schedule,
)


def test_variance_schedule_examples():
    assert build_variance_schedule(1, 20) == (0, 1, 3, 7, 15)
    assert build_variance_schedule(16, 20) == tuple(range(17)) + (18,)
    assert build_variance_schedule(20, 20) == tuple(range(20))


def test_variance_schedule_rejects_kappa_zero():
    with pytest.raises(ScheduleError):
        build_variance_schedule(0, 10)


def test_sync_schedule_examples():
    assert build_sync_schedule(4, 4, 16, 20) == (0, 1, 2, 3, 4, 6, 8, 12, 16)
    assert build_sync_schedule(0, 3, 1, 12) == tuple(range(12))
    assert build_sync_schedule(25, 5, 16, 20) == tuple(range(20))


def test_sync_schedule_gap_respects_clip():
    steps = build_sync_schedule(100, 50, 16, 5000)
    assert steps[0] == 0
    assert max_gap(steps) == 16


def test_sync_schedule_rejects_bad_parameters():
    with pytest.raises(ScheduleError):
        build_sync_schedule(0, 0, 16, 10)
    with pytest.raises(ScheduleError):
        build_sync_schedule(0, 1, 0, 10)


def test_variance_coupling_drops_steps_inside_long_gaps():
    sync = build_sync_schedule(4, 4, 16, 20)
    assert build_variance_schedule(16, 20, couple_to_sync=True, sync_steps=sync) == (0, 1, 2, 3)


def test_prefix_and_complement():
    assert prefix_schedule(3, 10) == (0, 1, 2)
    assert prefix_schedule(30, 10) == tuple(range(10))
    assert complement((0, 1, 2), 5) == (3, 4)


def test_learning_rate_schedules():
    assert lr_schedule("constant", {"gamma": 0.3}, 17) == 0.3
    params = {"peak": 1e-3, "warmup_steps": 10}
    assert lr_schedule("warmup_exp", params, 0) == 0.0
    assert lr_schedule("warmup_exp", params, 10) == 1e-3
    assert lr_schedule("warmup_exp", params, 10 + 520) == pytest.approx(0.99e-3)
    milestones = {"gamma0": 1e-4, "milestones": [30, 60]}
    assert lr_schedule("milestone", milestones, 10) == 1e-4
    assert lr_schedule("milestone", milestones, 45) == pytest.approx(1e-5)
    assert lr_schedule("milestone", milestones, 70) == pytest.approx(1e-6)
    assert cosine_lr(0, 1.0, 100, warmup_steps=10) == 0.0
    assert cosine_lr(10, 1.0, 100, warmup_steps=10) == pytest.approx(1.0)
    assert cosine_lr(100, 1.0, 100, warmup_steps=10, floor=0.1) == pytest.approx(0.1)


def test_unknown_learning_rate_schedule():
    with pytest.raises(UnknownScheduleError):
        lr_schedule("triangle", {}, 0)
    with pytest.raises(UnknownScheduleError):
        ScheduleSet(t_v=(0,), t_u=(0,), T=4, lr_kind="triangle")


def test_schedule_set_membership_and_range():
    s = ScheduleSet(t_v=(2, 0), t_u=(0, 3, 1), T=5, lr_params={"gamma": 0.5})
    assert s.t_v == (0, 2)
    assert s.t_u == (0, 1, 3)
    assert s.m == 2
    assert s.H == 2
    assert s.updates_variance(2) and not s.updates_variance(1)
    assert s.syncs(3) and not s.syncs(4)
    assert s.lr(4) == 0.5
    with pytest.raises(ScheduleError):
        s.syncs(5)
    with pytest.raises(ScheduleError):
        ScheduleSet(t_v=(0, 9), t_u=(), T=5)


def test_schedule_set_enforces_gap_bound():
    with pytest.raises(ScheduleError):
        ScheduleSet(t_v=(), t_u=(0, 10), T=20, h_bound=8)


def test_bounded_schedule_must_sync_at_step_zero():
    with pytest.raises(ScheduleError):
        ScheduleSet(t_v=(), t_u=(30, 35), T=40, h_bound=16)
    with pytest.raises(ScheduleError):
        ScheduleSet(t_v=(), t_u=(), T=40, h_bound=16)
    assert ScheduleSet(t_v=(), t_u=(30, 35), T=40).H == 5


def test_predicted_volume_examples():
    T, d = 10, 64
    everything = ScheduleSet(t_v=tuple(range(T)), t_u=tuple(range(T)), T=T)
    volume = predicted_volume(everything, d)
    assert volume.bits_per_param == pytest.approx(32 + 2 * (d + 64) / d)
    assert volume.rounds == 2 * T

    onebit_only = predicted_volume(ScheduleSet(t_v=(), t_u=tuple(range(T)), T=T), d)
    assert onebit_only.bits_per_param == pytest.approx(2 * (d + 64) / d)

    variance_only = predicted_volume(ScheduleSet(t_v=(0, 1), t_u=(), T=T), d)
    assert variance_only.total_bits_per_worker == 2 * 32 * d
    assert variance_only.rounds == 2


def test_volume_is_monotone_in_schedules():
    T, d = 100, 16
    small = ScheduleSet(t_v=(0, 1), t_u=(0, 4, 8), T=T)
    bigger = ScheduleSet(t_v=(0, 1, 2), t_u=(0, 2, 4, 8), T=T)
    assert predicted_volume(bigger, d).bits_per_param > predicted_volume(small, d).bits_per_param
