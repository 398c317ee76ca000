import math

import numpy as np
import pytest
from structlog.testing import capture_logs

from core.errors import ScheduleError
from core.types import HyperParams, SharedOptState, WorkerState, mean_left_fold
from engine.collectives import Communicator
from engine.compression import IDENTITY, ONE_BIT
from engine.optimizers import (
    STEP_FUNCTIONS,
    AlgorithmConfig,
    AlgorithmKind,
    BufferMode,
    adam_step,
    baseline_adam_step,
    framework_step,
    momentum_bound,
    theoretical_lr,
    zeroone_adam_step,
)
from engine.schedules import ScheduleSet


def _fleet(n, d, x0=None):
    x0 = np.zeros(d) if x0 is None else x0
    return [WorkerState.initial(i, x0, rng_seed=0) for i in range(n)], SharedOptState.initial(d)


def _cfg(kind, n, d, T, compressor=ONE_BIT, buffer_mode=BufferMode.LR_WEIGHTED, order="post"):
    hyper = HyperParams(n=n, d=d, T=T, momentum_order=order)
    return AlgorithmConfig(kind=kind, compressor=compressor, buffer_mode=buffer_mode, hyper=hyper)


def _grads(rng, n, d):
    return [rng.normal(size=d) for _ in range(n)]


def test_adam_step_example_uses_pre_update_momentum():
    hyper = HyperParams(beta1=0.9, beta2=0.999)
    x, m, v = adam_step(np.zeros(1), np.zeros(1), np.zeros(1), np.ones(1), 0.1, hyper)
    assert x[0] == 0.0
    assert m[0] == pytest.approx(0.1)
    assert v[0] == pytest.approx(0.001)


def test_adam_step_post_order_moves_immediately():
    hyper = HyperParams(momentum_order="post")
    x, m, _ = adam_step(np.zeros(1), np.zeros(1), np.zeros(1), np.ones(1), 0.1, hyper)
    assert x[0] == pytest.approx(-0.1 * m[0] / math.sqrt(1e-8))


def test_adam_step_zero_gradient_is_a_fixed_point():
    hyper = HyperParams()
    x = np.array([1.0, -2.0])
    m = np.zeros(2)
    v = np.zeros(2)
    for _ in range(10):
        x_next, m, v = adam_step(x, m, v, np.zeros(2), 0.1, hyper)
        assert np.array_equal(x_next, x)


def test_adam_step_without_memory():
    hyper = HyperParams(beta1=0.0, beta2=0.0)
    g = np.array([0.5, -3.0])
    _, m, v = adam_step(np.zeros(2), np.array([9.0, 9.0]), np.array([4.0, 4.0]), g, 0.1, hyper)
    assert np.array_equal(m, g)
    assert np.array_equal(v, g * g)


def test_framework_with_full_variance_schedule_is_adam():
    n, d, T = 3, 4, 6
    rng = np.random.default_rng(0)
    cfg = _cfg(AlgorithmKind.DISTRIBUTED_ADAM, n, d, T)
    schedules = ScheduleSet(t_v=tuple(range(T)), t_u=(), T=T, lr_params={"gamma": 0.01})
    workers, shared = _fleet(n, d)
    comm = Communicator(n, d)
    x, m, v = np.zeros(d), np.zeros(d), np.zeros(d)
    for t in range(T):
        grads = _grads(rng, n, d)
        framework_step(t, workers, grads, shared, schedules, cfg, comm)
        x, m, v = adam_step(x, m, v, mean_left_fold(grads), 0.01, cfg.hyper)
        for w in workers:
            assert np.array_equal(w.x, x)
            assert np.array_equal(w.m, m)
        assert np.array_equal(shared.v, v)
    assert comm.ledger.rounds_full == T
    assert comm.ledger.rounds_onebit == 0


def test_framework_freezes_variance_outside_schedule():
    n, d, T = 2, 5, 4
    rng = np.random.default_rng(1)
    cfg = _cfg(AlgorithmKind.ONEBIT_ADAM, n, d, T)
    schedules = ScheduleSet(t_v=(0,), t_u=(1, 2, 3), T=T, lr_params={"gamma": 0.01})
    workers, shared = _fleet(n, d)
    comm = Communicator(n, d)
    framework_step(0, workers, _grads(rng, n, d), shared, schedules, cfg, comm)
    frozen = shared.v.copy()
    for t in range(1, T):
        framework_step(t, workers, _grads(rng, n, d), shared, schedules, cfg, comm)
        assert np.array_equal(shared.v, frozen)
    assert comm.ledger.rounds_onebit == 3
    assert shared.sync_rounds == 3
    assert any(np.any(w.delta_worker) for w in workers)
    assert np.array_equal(workers[0].x, workers[1].x)


def test_onebit_adam_requires_prefix_variance_schedule():
    cfg = _cfg(AlgorithmKind.ONEBIT_ADAM, 2, 3, 10)
    cfg.check_schedules(ScheduleSet(t_v=(0, 1, 2), t_u=tuple(range(3, 10)), T=10))
    with pytest.raises(ScheduleError):
        cfg.check_schedules(ScheduleSet(t_v=(0, 2), t_u=(), T=10))
    with pytest.raises(ScheduleError):
        cfg.check_schedules(ScheduleSet(t_v=(0,), t_u=(), T=11))


def test_baseline_adam_keeps_replicas_identical():
    n, d = 3, 4
    rng = np.random.default_rng(2)
    cfg = _cfg(AlgorithmKind.ADAM, n, d, 3)
    schedules = ScheduleSet(t_v=(0, 1, 2), t_u=(), T=3, lr_params={"gamma": 0.05})
    workers, shared = _fleet(n, d)
    comm = Communicator(n, d)
    for t in range(3):
        baseline_adam_step(t, workers, _grads(rng, n, d), shared, schedules, cfg, comm)
    assert all(np.array_equal(w.x, workers[0].x) for w in workers)
    assert shared.variance_updates == 3
    assert comm.ledger.rounds_full == 3


@pytest.mark.parametrize(
    "order, t_u, T, diverge_after",
    [
        ("post", (0, 2, 4), 5, 1),
        ("pre", (0, 3, 6), 7, 2),
    ],
)
def test_zeroone_consensus_after_sync_and_divergence_between(order, t_u, T, diverge_after):
    # pre order: the first local step after a sync uses the shared momentum
    n, d = 3, 6
    rng = np.random.default_rng(3)
    cfg = _cfg(AlgorithmKind.ZEROONE_ADAM, n, d, T, order=order)
    schedules = ScheduleSet(t_v=(0,), t_u=t_u, T=T, lr_params={"gamma": 0.01})
    workers, shared = _fleet(n, d)
    comm = Communicator(n, d)

    for t in range(T):
        zeroone_adam_step(t, workers, _grads(rng, n, d), shared, schedules, cfg, comm)
        if t in schedules.t_u:
            for w in workers:
                assert np.array_equal(w.x, workers[0].x)
                assert np.array_equal(w.m, workers[0].m)
                assert not np.any(w.u)
            assert shared.last_sync == t
            assert shared.window_start == t + 1
            assert shared.window_lr_sum == 0.0
        elif t - shared.last_sync >= diverge_after:
            assert not np.array_equal(workers[0].x, workers[1].x)
            assert np.any(workers[0].u)
        else:
            assert np.array_equal(workers[0].x, workers[1].x)
    assert shared.sync_rounds == len(t_u)
    assert shared.variance_updates == 1


def test_zeroone_stale_variance_is_bitwise_unchanged():
    n, d, T = 2, 4, 6
    rng = np.random.default_rng(4)
    cfg = _cfg(AlgorithmKind.ZEROONE_ADAM, n, d, T)
    schedules = ScheduleSet(t_v=(0, 3), t_u=tuple(range(T)), T=T, lr_params={"gamma": 0.01})
    workers, shared = _fleet(n, d)
    comm = Communicator(n, d)
    for t in range(T):
        before = shared.v.copy()
        zeroone_adam_step(t, workers, _grads(rng, n, d), shared, schedules, cfg, comm)
        if t not in schedules.t_v:
            assert np.array_equal(shared.v, before)
        else:
            assert not np.array_equal(shared.v, before)


def test_zeroone_zero_learning_rate_window_resets_momentum():
    n, d, T = 2, 3, 4
    cfg = _cfg(AlgorithmKind.ZEROONE_ADAM, n, d, T)
    schedules = ScheduleSet(
        t_v=(0,), t_u=(0, 1), T=T, lr_kind="warmup_exp", lr_params={"peak": 0.1, "warmup_steps": 2}
    )
    workers, shared = _fleet(n, d)
    comm = Communicator(n, d)
    with capture_logs() as logs:
        zeroone_adam_step(0, workers, [np.ones(d), -np.ones(d) * 2], shared, schedules, cfg, comm)
    for w in workers:
        assert np.array_equal(w.m, np.zeros(d))
        assert np.array_equal(w.x, np.zeros(d))
    assert len(shared.diagnostics) == 1
    assert "sum to 0" in shared.diagnostics[0]
    assert any(entry["event"] == "zero_lr_window" and entry["log_level"] == "warning" for entry in logs)


def test_zeroone_single_worker_identity_matches_sequential_adam():
    d, T = 5, 30
    gamma = 2.0 ** -6
    rng = np.random.default_rng(5)
    cfg = _cfg(AlgorithmKind.ZEROONE_ADAM, 1, d, T, compressor=IDENTITY)
    schedules = ScheduleSet(t_v=tuple(range(T)), t_u=tuple(range(T)), T=T, lr_params={"gamma": gamma})
    workers, shared = _fleet(1, d)
    comm = Communicator(1, d)
    x, m, v = np.zeros(d), np.zeros(d), np.zeros(d)
    for t in range(T):
        g = rng.normal(size=d)
        zeroone_adam_step(t, workers, [g], shared, schedules, cfg, comm)
        x, m, v = adam_step(x, m, v, g, gamma, cfg.hyper)
        np.testing.assert_array_equal(workers[0].x, x)
        np.testing.assert_array_equal(workers[0].m, m)
        np.testing.assert_array_equal(shared.v, v)


def test_zeroone_pre_order_with_window_of_one_never_moves():
    d, T = 4, 20
    rng = np.random.default_rng(6)
    cfg = _cfg(AlgorithmKind.ZEROONE_ADAM, 2, d, T, compressor=IDENTITY, order="pre")
    schedules = ScheduleSet(t_v=tuple(range(T)), t_u=tuple(range(T)), T=T, lr_params={"gamma": 0.1})
    x0 = np.array([1.0, 2.0, 3.0, 4.0])
    workers, shared = _fleet(2, d, x0)
    comm = Communicator(2, d)
    for t in range(T):
        zeroone_adam_step(t, workers, _grads(rng, 2, d), shared, schedules, cfg, comm)
    for w in workers:
        assert np.array_equal(w.x, x0)
        assert not np.any(w.m)


def test_plain_and_lr_weighted_buffers_agree_for_constant_lr():
    n, d, T = 2, 4, 40
    schedules = ScheduleSet(t_v=(0, 1, 2), t_u=tuple(range(0, T, 4)), T=T, lr_params={"gamma": 0.03})
    rng = np.random.default_rng(7)
    grads = [_grads(rng, n, d) for _ in range(T)]
    finals = {}
    for mode in (BufferMode.LR_WEIGHTED, BufferMode.PLAIN):
        cfg = _cfg(AlgorithmKind.ZEROONE_ADAM, n, d, T, compressor=IDENTITY, buffer_mode=mode)
        workers, shared = _fleet(n, d)
        comm = Communicator(n, d)
        for t in range(T):
            zeroone_adam_step(t, workers, grads[t], shared, schedules, cfg, comm)
        finals[mode] = (workers[0].x.copy(), workers[0].m.copy())
    assert np.allclose(finals[BufferMode.LR_WEIGHTED][0], finals[BufferMode.PLAIN][0], rtol=1e-10, atol=1e-12)
    assert np.allclose(finals[BufferMode.LR_WEIGHTED][1], finals[BufferMode.PLAIN][1], rtol=1e-10, atol=1e-12)


def test_steps_must_arrive_in_order():
    cfg = _cfg(AlgorithmKind.ZEROONE_ADAM, 1, 2, 5)
    schedules = ScheduleSet(t_v=(0,), t_u=(0,), T=5)
    workers, shared = _fleet(1, 2)
    with pytest.raises(ScheduleError):
        zeroone_adam_step(1, workers, [np.ones(2)], shared, schedules, cfg, Communicator(1, 2))


def test_every_algorithm_has_a_step_function():
    assert set(STEP_FUNCTIONS) == set(AlgorithmKind)


def test_theoretical_lr_examples():
    hyper = HyperParams(eps=1.0)
    assert theoretical_lr("local01", hyper, L=1.0, sigma=1.0, g_inf=0.0, T=4, n=1) == pytest.approx(1 / 6)
    assert theoretical_lr("local01", hyper, L=1e-6, sigma=1.0, g_inf=1e-3, T=4, n=1) == pytest.approx(1 / 6)
    assert theoretical_lr("basic01", hyper, L=1e-6, sigma=1.0, g_inf=1e-3, T=4, n=1) == pytest.approx(1 / 125)
    noisy = theoretical_lr("basic01", HyperParams(), L=1.0, sigma=1e6, g_inf=1.0, T=100, n=1)
    assert noisy == pytest.approx(math.sqrt(1 / (1e12 * 100)))


def test_theoretical_lr_warns_outside_freeze_budget():
    with capture_logs() as logs:
        theoretical_lr("local01", HyperParams(), L=1.0, sigma=1.0, g_inf=1.0, T=100, n=2, freeze_count=10**6)
    assert any(entry["event"] == "freeze_budget_exceeded" for entry in logs)


def test_theoretical_lr_rejects_bad_constants():
    with pytest.raises(ValueError):
        theoretical_lr("local01", HyperParams(), L=0.0, sigma=1.0, g_inf=1.0, T=10, n=1)


def test_momentum_bound_examples():
    assert momentum_bound(HyperParams(beta1=0.5), g_inf=1.0, delta=1.0, d=2) == pytest.approx(120.0)
    assert momentum_bound(HyperParams(beta1=0.0), g_inf=2.0, delta=0.0, d=3) == pytest.approx(36.0)
    assert momentum_bound(HyperParams(beta1=0.999999), g_inf=1.0, delta=0.0, d=1) > 1e12
