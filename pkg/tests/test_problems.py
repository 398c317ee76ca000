import numpy as np
import pytest

from core.errors import ConfigError
from core.types import HyperParams
from engine.problems import (
    LogisticOracle,
    ProblemKind,
    ProblemSpec,
    QuadraticOracle,
    TinyMLPOracle,
    build_oracle,
    check_bounded_gradient,
    check_compression_omega,
    check_lipschitz,
    check_local_step_bound,
    check_unbiased,
    check_variance,
    full_grad,
    grad,
    loss,
)
from engine.schedules import ScheduleSet


def _scalar_quadratic(sigma=0.0, clip=None):
    return QuadraticOracle(np.array([2.0]), np.array([0.0]), n_workers=1, sigma=sigma, seed=0, g_inf_clip=clip)


def test_quadratic_examples():
    oracle = _scalar_quadratic()
    x = np.array([3.0])
    assert np.array_equal(grad(oracle, 0, 0, x), [6.0])
    assert loss(oracle, x) == pytest.approx(9.0)
    assert np.array_equal(full_grad(oracle, x), [6.0])


def test_quadratic_minimizer():
    oracle = QuadraticOracle.random(6, 2, 0.0, seed=4)
    assert np.allclose(oracle.grad(1, 5, oracle.x_star), 0.0, atol=1e-12)
    assert oracle.loss(oracle.x_star) == pytest.approx(0.0, abs=1e-20)
    assert oracle.known_L == pytest.approx(1.0)
    assert oracle.diag.min() == pytest.approx(0.1)


def test_gradients_are_deterministic_per_worker_and_step():
    oracle = QuadraticOracle.random(5, 3, 1.0, seed=9)
    x = np.ones(5)
    assert np.array_equal(oracle.grad(2, 17, x), oracle.grad(2, 17, x))
    assert not np.array_equal(oracle.grad(1, 17, x), oracle.grad(2, 17, x))
    assert not np.array_equal(oracle.grad(2, 17, x), oracle.grad(2, 18, x))
    again = QuadraticOracle.random(5, 3, 1.0, seed=9)
    assert np.array_equal(again.grad(0, 3, x), oracle.grad(0, 3, x))


def test_clipping_bounds_infinity_norm():
    oracle = QuadraticOracle.random(8, 2, 1.0, seed=1, g_inf_clip=0.25)
    g = oracle.grad(0, 0, np.full(8, 10.0))
    assert np.abs(g).max() <= 0.25


def test_negative_sigma_is_rejected():
    with pytest.raises(ConfigError):
        QuadraticOracle.random(3, 1, -1.0, seed=0)


def test_logistic_large_margin_loss_is_small():
    oracle = LogisticOracle(6, 2, 0.0, seed=3, n_samples=200)
    assert oracle.loss(1e3 * oracle.planted) < 0.01
    assert oracle.loss(np.zeros(6)) == pytest.approx(np.log(2.0))


def test_logistic_smoothness_constant_and_shards():
    oracle = LogisticOracle(4, 4, 0.0, seed=0, n_samples=64, l2=0.1)
    top = np.linalg.eigvalsh(oracle.features.T @ oracle.features).max()
    assert oracle.known_L == pytest.approx(top / (4 * 64) + 0.1)
    owned = np.sort(np.concatenate(oracle.shards))
    assert np.array_equal(owned, np.arange(64))
    assert all(np.all(shard % 4 == i) for i, shard in enumerate(oracle.shards))
    with pytest.raises(ConfigError):
        LogisticOracle(4, 3, 0.0, seed=0, n_samples=64)


def test_mlp_gradient_matches_finite_differences():
    oracle = TinyMLPOracle(3, 4, n_workers=1, sigma=0.0, seed=2, n_samples=32)
    assert oracle.d == TinyMLPOracle.dimension(3, 4) == 4 * 3 + 2 * 4 + 1
    x = oracle.initial_point()
    g = oracle.full_grad(x)
    h = 1e-6
    numeric = np.empty_like(x)
    for j in range(x.shape[0]):
        e = np.zeros_like(x)
        e[j] = h
        numeric[j] = (oracle.loss(x + e) - oracle.loss(x - e)) / (2 * h)
    assert np.allclose(g, numeric, rtol=1e-5, atol=1e-8)


def test_mlp_planted_network_has_zero_loss():
    oracle = TinyMLPOracle(2, 3, n_workers=2, sigma=0.0, seed=0, n_samples=16)
    assert oracle.loss(oracle.planted) == pytest.approx(0.0, abs=1e-24)
    assert oracle.known_L > 0


def test_build_oracle_dispatch():
    hyper = HyperParams(n=2, d=10)
    assert isinstance(build_oracle(ProblemSpec(), hyper, seed=0), QuadraticOracle)
    assert isinstance(build_oracle(ProblemSpec(kind=ProblemKind.LOGISTIC, n_samples=64), hyper, seed=0), LogisticOracle)
    mlp = ProblemSpec(kind=ProblemKind.MLP_TINY, input_dim=2, hidden=2, n_samples=8)
    assert isinstance(build_oracle(mlp, HyperParams(n=2, d=9), seed=0), TinyMLPOracle)
    with pytest.raises(ConfigError):
        build_oracle(mlp, hyper, seed=0)


def test_assumption_checks_on_quadratic():
    oracle = QuadraticOracle.random(8, 4, 1.0, seed=5)
    x = np.full(8, 0.5)
    assert check_unbiased(oracle, x, draws=20_000).passed
    result = check_variance(oracle, x, 4, draws=5_000)
    assert result.passed
    assert result.threshold == pytest.approx(0.25)
    assert check_lipschitz(oracle, pairs=50).passed
    with pytest.raises(ConfigError):
        check_variance(oracle, x, 8, draws=10)


def test_bounded_gradient_check_needs_clipping():
    x = np.full(4, 5.0)
    assert not check_bounded_gradient(QuadraticOracle.random(4, 2, 1.0, seed=0), x, draws=5).passed
    assert check_bounded_gradient(QuadraticOracle.random(4, 2, 1.0, seed=0, g_inf_clip=1.0), x, draws=5).passed


def test_compression_and_local_step_checks():
    rng = np.random.default_rng(0)
    assert check_compression_omega([rng.normal(size=d) for d in range(1, 40)]).passed
    schedules = ScheduleSet(t_v=(0,), t_u=(0, 4, 8, 16), T=20)
    assert check_local_step_bound(schedules, 8).passed
    assert not check_local_step_bound(schedules, 4).passed
    assert not check_local_step_bound(ScheduleSet(t_v=(0,), t_u=(2, 4), T=6), 8).passed
