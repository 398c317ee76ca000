from __future__ import annotations

import inspect
from pathlib import Path

import yaml
from pydantic import ValidationError

from core.errors import ConfigError, ErrorDetail, config_error_from_validation
from engine.optimizers import AlgorithmKind
from engine.problems import ProblemKind, TinyMLPOracle
from engine.schedules import LR_SCHEDULES
from schemas.run_config import RunConfig


def validate_run_config(path: str | Path) -> RunConfig:
    """Load ``path`` and run every check that does not need a simulation."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must contain a mapping at the top level")
    try:
        config = RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise config_error_from_validation(exc, str(path)) from exc

    problems = check_consistency(config)
    if problems:
        raise ConfigError(f"Inconsistent run configuration in {path}", problems)
    return config


def check_consistency(config: RunConfig) -> list[ErrorDetail]:
    problems: list[ErrorDetail] = []
    hyper = config.algorithm.hyper
    T = hyper.T

    lr = config.schedules.lr
    fn = LR_SCHEDULES.get(lr.kind)
    if fn is None:
        problems.append(_detail("schedules.lr.kind", f"unknown learning-rate schedule '{lr.kind}'"))
    else:
        try:
            inspect.signature(fn).bind(0, **lr.params)
        except TypeError as exc:
            problems.append(_detail("schedules.lr.params", f"parameters do not fit '{lr.kind}': {exc}"))
    if lr.theory is not None and lr.theory_g_inf is None and hyper.g_inf_clip is None:
        problems.append(_detail("schedules.lr.theory_g_inf", "theoretical lr needs G∞: set theory_g_inf or g_inf_clip"))

    for name, steps in (
        ("schedules.variance.steps", config.schedules.variance.steps),
        ("schedules.sync.steps", config.schedules.sync.steps),
    ):
        if steps is not None and any(not 0 <= s < T for s in steps):
            problems.append(_detail(name, f"steps must lie in [0, {T})"))

    sync_steps = config.schedules.sync.steps
    if config.algorithm.kind is AlgorithmKind.ZEROONE_ADAM and sync_steps is not None and 0 not in sync_steps:
        problems.append(_detail("schedules.sync.steps", "zeroone_adam must sync at step 0"))

    prefix = config.schedules.variance.full_precision_steps
    if config.algorithm.kind is AlgorithmKind.ONEBIT_ADAM and prefix is not None and prefix > T:
        problems.append(_detail("schedules.variance.full_precision_steps", f"exceeds T={T}"))

    problem = config.problem
    if problem.kind is ProblemKind.MLP_TINY:
        expected = TinyMLPOracle.dimension(problem.input_dim, problem.hidden)
        if hyper.d != expected:
            problems.append(_detail("algorithm.hyper.d", f"mlp_tiny needs d = h·p + 2h + 1 = {expected}"))
    if problem.kind in (ProblemKind.LOGISTIC, ProblemKind.MLP_TINY) and problem.n_samples % hyper.n != 0:
        problems.append(_detail("problem.n_samples", f"must be divisible by n={hyper.n}"))
    if problem.kind is ProblemKind.QUADRATIC and problem.mu > problem.L:
        problems.append(_detail("problem.mu", "must not exceed problem.L"))
    return problems


def _detail(field: str, message: str) -> ErrorDetail:
    return ErrorDetail(code="inconsistent", message=message, field=field)
