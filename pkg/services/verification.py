"""
Verification suites. Each suite runs small simulations or direct evaluations
and returns one ``CheckResult`` per named property with the measured value,
the threshold it is held to and the margin between them.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

from core.logging_config import get_logger
from core.types import HyperParams, MomentumOrder, ParamVector, mean_left_fold
from engine.collectives import Communicator, combined_error
from engine.compression import (
    IDENTITY,
    ONE_BIT,
    CompressorSpec,
    closed_form_error_sq,
    compress,
    compression_error_sq,
    pack,
    unpack,
)
from engine.optimizers import AlgorithmConfig, AlgorithmKind, BufferMode, TheoryVariant, momentum_bound, theoretical_lr
from engine.problems import (
    AssumptionCheck,
    LogisticOracle,
    ProblemSpec,
    QuadraticOracle,
    check_bounded_gradient,
    check_compression_omega,
    check_lipschitz,
    check_local_step_bound,
    check_unbiased,
    check_variance,
)
from engine.schedules import ScheduleSet, predicted_volume
from schemas.metrics import CheckResult, MetricsRecord, VerificationReport
from schemas.run_config import (
    LrScheduleParams,
    RunConfig,
    ScheduleParams,
    SyncScheduleParams,
    VarianceScheduleParams,
)
from services.runner import Simulation, plan_schedules

logger = get_logger(__name__)

Suite = Callable[[int], list[CheckResult]]


def _upper(suite: str, name: str, measured: float, threshold: float, detail: str = "") -> CheckResult:
    return CheckResult(
        suite=suite,
        name=name,
        passed=bool(measured <= threshold),
        measured=float(measured),
        threshold=float(threshold),
        margin=float(threshold - measured),
        detail=detail,
    )


def _lower(suite: str, name: str, measured: float, threshold: float, detail: str = "") -> CheckResult:
    return CheckResult(
        suite=suite,
        name=name,
        passed=bool(measured >= threshold),
        measured=float(measured),
        threshold=float(threshold),
        margin=float(measured - threshold),
        detail=detail,
    )


def _from_assumption(suite: str, check: AssumptionCheck) -> CheckResult:
    return CheckResult(
        suite=suite,
        name=check.name,
        passed=check.passed,
        measured=check.measured,
        threshold=check.threshold,
        margin=check.threshold - check.measured,
        detail=check.detail,
    )


def simulation_config(
    kind: AlgorithmKind,
    *,
    n: int,
    d: int,
    T: int,
    seed: int,
    gamma: float = 0.005,
    sigma: float = 1.0,
    compressor: CompressorSpec = ONE_BIT,
    buffer_mode: BufferMode = BufferMode.LR_WEIGHTED,
    momentum_order: MomentumOrder = MomentumOrder.POST,
    g_inf_clip: float | None = None,
    t_v: Sequence[int] | None = None,
    t_u: Sequence[int] | None = None,
    kappa: int = 4,
    warmup_steps: int = 100,
    doubling_period: int = 100,
    clip: int = 16,
    full_precision_steps: int | None = None,
    name: str = "verify",
) -> RunConfig:
    """Quadratic-problem run configuration used by the suites and the tests."""
    hyper = HyperParams(n=n, d=d, T=T, g_inf_clip=g_inf_clip, momentum_order=momentum_order)
    return RunConfig(
        name=name,
        seed=seed,
        algorithm=AlgorithmConfig(kind=kind, buffer_mode=buffer_mode, compressor=compressor, hyper=hyper),
        schedules=ScheduleParams(
            variance=VarianceScheduleParams(
                kappa=kappa,
                steps=list(t_v) if t_v is not None else None,
                full_precision_steps=full_precision_steps,
            ),
            sync=SyncScheduleParams(
                warmup_steps=warmup_steps,
                doubling_period=doubling_period,
                clip=clip,
                steps=list(t_u) if t_u is not None else None,
            ),
            lr=LrScheduleParams(kind="constant", params={"gamma": gamma}),
        ),
        problem=ProblemSpec(sigma=sigma),
    )


def reference_distributed_adam(
    oracle: QuadraticOracle,
    hyper: HyperParams,
    gamma: float,
    T: int,
    variance_steps: Iterable[int] | None = None,
) -> list[ParamVector]:
    """
    Distributed Adam written out directly: one model, gradients averaged over
    all workers, variance refreshed on ``variance_steps`` (every step if None).
    The model step uses the updated momentum and the variance before its update.
    """
    refresh = set(range(T)) if variance_steps is None else set(variance_steps)
    x = oracle.initial_point()
    m = np.zeros(hyper.d)
    v = np.zeros(hyper.d)
    trajectory = []
    for t in range(T):
        total = np.zeros(hyper.d)
        for i in range(hyper.n):
            total = total + oracle.grad(i, t, x)
        g = total / hyper.n
        m = hyper.beta1 * m + (1.0 - hyper.beta1) * g
        x = x - gamma * m / np.sqrt(v + hyper.eps)
        if t in refresh:
            v = hyper.beta2 * v + (1.0 - hyper.beta2) * g * g
        trajectory.append(x.copy())
    return trajectory


def _trajectory(sim: Simulation) -> list[ParamVector]:
    states: list[ParamVector] = []
    sim.run(observer=lambda record, s: states.append(s.workers[0].x.copy()))
    return states


def _max_inf_diff(a: Sequence[ParamVector], b: Sequence[ParamVector]) -> float:
    return max(float(np.abs(x - y).max()) for x, y in zip(a, b))


def _worker_spread(sim: Simulation) -> float:
    lead = sim.workers[0].x
    return max(float(np.abs(w.x - lead).max()) for w in sim.workers)


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------

def compression_suite(seed: int) -> list[CheckResult]:
    suite = "compression"
    rng = np.random.default_rng([seed, 101])
    vectors = [rng.normal(0.0, 1.0, size=int(rng.integers(1, 257))) for _ in range(1000)]

    worst_identity = 0.0
    roundtrip_mismatches = 0
    worst_idempotence = 0.0
    worst_equivariance = 0.0
    for x in vectors:
        norm_sq = float(np.dot(x, x))
        worst_identity = max(worst_identity, abs(compression_error_sq(x) - closed_form_error_sq(x)) / norm_sq)
        once = compress(ONE_BIT, x)
        if not np.array_equal(unpack(pack(x)), once):
            roundtrip_mismatches += 1
        twice = compress(ONE_BIT, once)
        worst_idempotence = max(worst_idempotence, float(np.abs(twice - once).max() / max(abs(once[0]), 1e-300)))
        alpha = float(rng.uniform(0.1, 10.0))
        scaled = compress(ONE_BIT, alpha * x)
        worst_equivariance = max(
            worst_equivariance, float(np.abs(scaled - alpha * once).max() / max(abs(alpha * once[0]), 1e-300))
        )

    return [
        _upper(suite, "closed_form_error", worst_identity, 1e-9, "relative to ||x||^2 over 1000 vectors, d in [1, 256]"),
        _from_assumption(suite, check_compression_omega(vectors)),
        _upper(suite, "pack_roundtrip", roundtrip_mismatches, 0, "vectors whose packed round trip differs from C[x]"),
        _upper(suite, "idempotence", worst_idempotence, 1e-12),
        _upper(suite, "scale_equivariance", worst_equivariance, 1e-12),
        _upper(suite, "identity_exact", float(np.abs(compress(IDENTITY, vectors[0]) - vectors[0]).max()), 0.0),
    ]


def collectives_suite(seed: int) -> list[CheckResult]:
    suite = "collectives"
    n, d, rounds = 4, 32, 500
    rng = np.random.default_rng([seed, 202])
    comm = Communicator(n, d)
    worker_errors = [np.zeros(d) for _ in range(n)]
    server_error = np.zeros(d)

    worst = 0.0
    full_rounds = 0
    for r in range(rounds):
        inputs = [rng.normal(0.0, 1.0, size=d) for _ in range(n)]
        before = combined_error(worker_errors, server_error)
        result = comm.ef_onebit_allreduce(inputs, worker_errors, server_error, ONE_BIT)
        worker_errors, server_error = result.worker_errors, result.server_error
        after = combined_error(worker_errors, server_error)
        residual = result.out - mean_left_fold(inputs) - before + after
        worst = max(worst, float(np.abs(residual).max()))
        if r % 10 == 0:
            comm.allreduce(inputs)
            full_rounds += 1

    ledger = comm.ledger
    expected_bits = full_rounds * 32 * d + rounds * 2 * (d + 64)

    hand = Communicator(2, 2)
    hand_out = hand.ef_onebit_allreduce(
        [np.array([1.0, 0.0]), np.array([0.0, 1.0])], [np.zeros(2), np.zeros(2)], np.zeros(2), ONE_BIT
    )
    hand_dev = max(
        float(np.abs(hand_out.out - 0.5).max()),
        float(np.abs(hand_out.worker_errors[0] - np.array([0.5, -0.5])).max()),
        float(np.abs(hand_out.worker_errors[1] - np.array([-0.5, 0.5])).max()),
        float(np.abs(hand_out.server_error).max()),
    )

    ident = Communicator(n, d)
    ident_inputs = [rng.normal(0.0, 1.0, size=d) for _ in range(n)]
    ident_out = ident.ef_onebit_allreduce(ident_inputs, [np.zeros(d)] * n, np.zeros(d), IDENTITY)
    ident_err = float(np.abs(combined_error(ident_out.worker_errors, ident_out.server_error)).max())

    return [
        _upper(suite, "telescoping_identity", worst, 1e-12, f"{rounds} one-bit rounds, n={n}, d={d}"),
        _upper(suite, "ledger_exact", abs(ledger.bits_sent_per_worker - expected_bits), 0, f"expected {expected_bits} bits"),
        _upper(suite, "hand_example", hand_dev, 0.0),
        _upper(suite, "identity_zero_error", ident_err, 0.0),
    ]


def equivalence_suite(seed: int) -> list[CheckResult]:
    suite = "equivalence"
    n, d, T, gamma = 4, 50, 500, 0.005
    every = list(range(T))

    zeroone_cfg = simulation_config(
        AlgorithmKind.ZEROONE_ADAM, n=n, d=d, T=T, seed=seed, gamma=gamma, compressor=IDENTITY, t_v=every, t_u=every
    )
    oracle = QuadraticOracle.random(d, n, 1.0, seed)
    hyper = zeroone_cfg.algorithm.hyper
    reference = reference_distributed_adam(oracle, hyper, gamma, T)
    zeroone = _trajectory(Simulation(zeroone_cfg, oracle=oracle))

    dist_cfg = simulation_config(AlgorithmKind.DISTRIBUTED_ADAM, n=n, d=d, T=T, seed=seed, gamma=gamma)
    distributed = _trajectory(Simulation(dist_cfg, oracle=oracle))

    prefix = T // 8
    frozen_cfg = simulation_config(
        AlgorithmKind.ONEBIT_ADAM, n=n, d=d, T=T, seed=seed, gamma=gamma, compressor=IDENTITY,
        full_precision_steps=prefix,
    )
    frozen_reference = reference_distributed_adam(oracle, hyper, gamma, T, variance_steps=range(prefix))
    frozen = _trajectory(Simulation(frozen_cfg, oracle=oracle))

    adam_cfg = simulation_config(AlgorithmKind.ADAM, n=n, d=d, T=T, seed=seed, gamma=gamma)
    adam = _trajectory(Simulation(adam_cfg, oracle=oracle))

    return [
        _upper(suite, "zeroone_vs_distributed_adam", _max_inf_diff(zeroone, reference), 1e-10,
               f"identity compressor, T_u = T_v = all, n={n}, d={d}, T={T}"),
        _upper(suite, "framework_vs_distributed_adam", _max_inf_diff(distributed, reference), 1e-10, "T_v = all"),
        _upper(suite, "framework_identity_frozen_variance", _max_inf_diff(frozen, frozen_reference), 1e-10,
               f"identity compressor, T_v = first {prefix} steps"),
        _upper(suite, "adam_vs_distributed_adam", _max_inf_diff(adam, distributed), 0.0, "bitwise"),
        *_consensus_checks(suite, seed, MomentumOrder.POST),
        *_consensus_checks(suite, seed, MomentumOrder.PRE),
        _momentum_reconstruction_check(suite, seed),
    ]


def _consensus_checks(suite: str, seed: int, order: MomentumOrder) -> list[CheckResult]:
    cfg = simulation_config(
        AlgorithmKind.ZEROONE_ADAM, n=4, d=16, T=300, seed=seed, gamma=0.01,
        momentum_order=order, warmup_steps=20, doubling_period=40, clip=8,
    )
    sim = Simulation(cfg)
    synced_spread = 0.0
    local_spread = 0.0

    def observe(record: MetricsRecord, s: Simulation) -> None:
        nonlocal synced_spread, local_spread
        spread = _worker_spread(s)
        if s.schedules.syncs(record.step):
            synced_spread = max(synced_spread, spread)
        else:
            local_spread = max(local_spread, spread)

    sim.run(observer=observe)
    return [
        _upper(suite, f"consensus_after_sync_{order.value}", synced_spread, 0.0,
               "max ||x_i - x_0||_inf over sync steps"),
        _lower(suite, f"local_steps_diverge_{order.value}", local_spread, math.ulp(0.0),
               "max ||x_i - x_0||_inf between syncs"),
    ]


def _momentum_reconstruction_check(suite: str, seed: int) -> CheckResult:
    T = 50
    every = list(range(T))
    cfg = simulation_config(
        AlgorithmKind.ZEROONE_ADAM, n=4, d=16, T=T, seed=seed, gamma=2.0 ** -7, compressor=IDENTITY,
        t_v=every, t_u=every,
    )
    sim = Simulation(cfg)
    hyper = cfg.algorithm.hyper
    mismatches = 0
    for t in range(T):
        expected = mean_left_fold(
            [
                hyper.beta1 * w.m + (1.0 - hyper.beta1) * sim.oracle.grad(w.worker_id, t, w.x)
                for w in sim.workers
            ]
        )
        sim.step()
        mismatches += sum(0 if np.array_equal(w.m, expected) else 1 for w in sim.workers)
    return _upper(suite, "momentum_reconstruction_exact", mismatches, 0,
                  "identity compressor, window length 1, power-of-two learning rate")


def bounds_suite(seed: int) -> list[CheckResult]:
    """Variance envelopes and the momentum bound, in both momentum orders."""
    checks: list[CheckResult] = []
    for order in (MomentumOrder.PRE, MomentumOrder.POST):
        checks.extend(_bounds_checks("bounds", seed, order))
    return checks


def _bounds_checks(suite: str, seed: int, order: MomentumOrder) -> list[CheckResult]:
    g_inf = 1.0
    cfg = simulation_config(
        AlgorithmKind.ZEROONE_ADAM, n=4, d=16, T=2000, seed=seed, gamma=0.01, g_inf_clip=g_inf,
        buffer_mode=BufferMode.PLAIN, momentum_order=order, warmup_steps=100, doubling_period=200, clip=16,
    )
    sim = Simulation(cfg)
    hyper = cfg.algorithm.hyper
    v_first: ParamVector | None = None
    worst_lower = -math.inf
    worst_upper = -math.inf
    worst_momentum = 0.0
    upper = math.sqrt(g_inf * g_inf + hyper.eps)

    def observe(record: MetricsRecord, s: Simulation) -> None:
        nonlocal v_first, worst_lower, worst_upper, worst_momentum
        root = np.sqrt(s.shared.v + hyper.eps)
        if v_first is None:
            v_first = s.shared.v.copy()
        lower = hyper.beta2 ** (s.shared.variance_updates / 2.0) * np.sqrt(v_first + hyper.eps)
        worst_lower = max(worst_lower, float((lower - root).max()))
        worst_upper = max(worst_upper, float((root - upper).max()))
        worst_momentum = max(worst_momentum, max(float(np.dot(w.m, w.m)) for w in s.workers))

    sim.run(observer=observe)
    delta = sim.comm.ledger.max_compression_error
    bound = momentum_bound(hyper, g_inf, delta, hyper.d)
    tag = order.value
    return [
        _upper(suite, f"variance_lower_envelope_{tag}", worst_lower, 0.0,
               "max of beta2^(m_t/2) sqrt(v_1+eps) - sqrt(v_t+eps)"),
        _upper(suite, f"variance_upper_envelope_{tag}", worst_upper, 0.0, "max of sqrt(v_t+eps) - sqrt(G_inf^2+eps)"),
        _upper(suite, f"momentum_bound_{tag}", worst_momentum, bound,
               f"Delta = {delta:.6g} (largest observed compression error)"),
    ]


def volume_suite(seed: int) -> list[CheckResult]:
    suite = "volume"
    T, d, n = 1000, 64, 4
    zeroone_cfg = simulation_config(
        AlgorithmKind.ZEROONE_ADAM, n=n, d=d, T=T, seed=seed, kappa=4,
        warmup_steps=100, doubling_period=100, clip=16,
    )
    result = Simulation(zeroone_cfg).run()
    summary = result.summary
    predicted = predicted_volume(result.schedules, d)

    onebit_cfg = simulation_config(
        AlgorithmKind.ONEBIT_ADAM, n=n, d=d, T=T, seed=seed, full_precision_steps=T // 8
    )
    onebit = predicted_volume(plan_schedules(onebit_cfg), d)
    ratio = summary.bits_per_param / onebit.bits_per_param

    larger_sync = ScheduleSet(t_v=result.schedules.t_v, t_u=tuple(range(T)), T=T)
    monotone = predicted_volume(larger_sync, d).bits_per_param - predicted.bits_per_param

    return [
        _upper(suite, "ledger_bits_match_prediction", abs(summary.volume_delta_bits), 0),
        _upper(suite, "ledger_rounds_match_prediction", abs(summary.rounds_total - predicted.rounds), 0),
        _upper(suite, "zeroone_cheaper_than_onebit_adam", ratio, 1.0 - 1e-12,
               f"bits/param {summary.bits_per_param:.4f} vs {onebit.bits_per_param:.4f}"),
        _lower(suite, "monotone_volume", monotone, 0.0, "enlarging T_u never lowers bits/param"),
        _from_assumption(suite, check_local_step_bound(result.schedules, zeroone_cfg.schedules.sync.clip)),
    ]


def problems_suite(seed: int) -> list[CheckResult]:
    suite = "problems"
    d = 8
    quad = QuadraticOracle.random(d, 8, 1.0, seed)
    x = np.full(d, 0.5)
    checks = [_from_assumption(suite, check_unbiased(quad, x, draws=100_000))]
    for n in (1, 2, 4, 8):
        checks.append(_from_assumption(suite, check_variance(quad, x, n, draws=10_000)))
    checks.append(_from_assumption(suite, check_lipschitz(quad, seed=seed)))
    logistic = LogisticOracle(d, 4, 0.0, seed, n_samples=256, l2=0.01)
    lip = check_lipschitz(logistic, seed=seed)
    checks.append(_from_assumption(suite, AssumptionCheck("lipschitz_logistic", lip.passed, lip.measured, lip.threshold, lip.detail)))
    clipped = QuadraticOracle.random(d, 4, 1.0, seed, g_inf_clip=0.5)
    checks.append(_from_assumption(suite, check_bounded_gradient(clipped, np.full(d, 3.0), draws=200)))
    return checks


def convergence_suite(seed: int) -> list[CheckResult]:
    """Sanity run at the theoretical learning rate; slow, so it only runs when named."""
    suite = "convergence"
    n, d, T, sigma, g_inf = 8, 20, 20_000, 1.0, 4.0
    hyper = HyperParams(n=n, d=d, T=T, g_inf_clip=g_inf, momentum_order=MomentumOrder.POST)
    oracle = QuadraticOracle.random(d, n, sigma, seed, g_inf_clip=g_inf)
    gamma = theoretical_lr(TheoryVariant.LOCAL01, hyper, oracle.known_L, sigma, g_inf, T, n)

    results = {}
    for kind in (AlgorithmKind.ZEROONE_ADAM, AlgorithmKind.DISTRIBUTED_ADAM):
        cfg = simulation_config(
            kind, n=n, d=d, T=T, seed=seed, gamma=gamma, sigma=sigma, g_inf_clip=g_inf, kappa=4,
            warmup_steps=200, doubling_period=1000, clip=16, name=kind.value,
        )
        results[kind] = Simulation(cfg, oracle=oracle).run()

    zeroone = results[AlgorithmKind.ZEROONE_ADAM]
    distributed = results[AlgorithmKind.DISTRIBUTED_ADAM]
    checks = [
        _upper(suite, "zeroone_noise_floor", zeroone.summary.mean_grad_norm_sq_last_k,
               2.0 * distributed.summary.mean_grad_norm_sq_last_k,
               f"mean of last 100 ||grad f||^2, lr={gamma:.6g}; threshold is twice distributed Adam"),
    ]
    for kind, result in results.items():
        early = result.records[100].grad_norm_sq
        late = result.summary.mean_grad_norm_sq_last_k
        checks.append(_lower(suite, f"{kind.value}_decrease", early / late, 10.0, "step-100 value over the final mean"))
    return checks


SUITES: dict[str, Suite] = {
    "compression": compression_suite,
    "collectives": collectives_suite,
    "equivalence": equivalence_suite,
    "bounds": bounds_suite,
    "volume": volume_suite,
    "problems": problems_suite,
    "convergence": convergence_suite,
}

DEFAULT_SUITES = ("compression", "collectives", "equivalence", "bounds", "volume", "problems")


def verify(suites: Iterable[str] | None = None, seed: int = 0) -> VerificationReport:
    names = list(suites) if suites else list(DEFAULT_SUITES)
    checks: list[CheckResult] = []
    for name in names:
        suite = SUITES[name]
        results = suite(seed)
        failed = [c.name for c in results if not c.passed]
        logger.info("suite_finished", suite=name, checks=len(results), failed=len(failed))
        for check in results:
            if not check.passed:
                logger.warning("check_failed", suite=name, check=check.name, measured=check.measured, threshold=check.threshold)
        checks.extend(results)
    return VerificationReport.from_checks(checks)
