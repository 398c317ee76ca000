from __future__ import annotations

import functools
import json
from pathlib import Path
from typing import Any, Callable

import click
from pydantic import ValidationError

from config import SimulatorSettings, get_settings
from config_validator import validate_run_config
from core.errors import SimulatorError, config_error_from_validation
from core.logging_config import get_logger, setup_logging
from engine.optimizers import AlgorithmKind
from engine.problems import check_local_step_bound
from engine.schedules import predicted_volume
from services.runner import plan_schedules, run_experiment
from services.verification import DEFAULT_SUITES, SUITES, verify

logger = get_logger(__name__)


# ---------------------------------------------------------------------------
# Error handling
# ---------------------------------------------------------------------------

def handles_simulator_errors(fn: Callable[..., Any]) -> Callable[..., Any]:
    """Turn a ``SimulatorError`` into a structured stderr message and its exit code."""

    @functools.wraps(fn)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return fn(*args, **kwargs)
        except SimulatorError as exc:
            logger.error(
                "command_failed",
                error=exc.error_code,
                message=exc.message,
                details=[d.as_dict() for d in exc.details],
            )
            click.echo(json.dumps(exc.as_dict(), sort_keys=True), err=True)
            raise SystemExit(exc.exit_code) from exc

    return wrapper


def _emit(payload: dict[str, Any]) -> None:
    click.echo(json.dumps(payload, indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

@click.group()
@click.option("--log-level", default=None, help="Overrides ZEROONE_LOG_LEVEL.")
@click.option("--json-logs/--console-logs", default=None, help="Overrides ZEROONE_LOG_JSON.")
@click.pass_context
def cli(ctx: click.Context, log_level: str | None, json_logs: bool | None) -> None:
    """Deterministic simulator for 1-bit and 0/1 Adam."""
    try:
        settings = get_settings()
    except ValidationError as exc:
        error = config_error_from_validation(exc, "environment")
        click.echo(json.dumps(error.as_dict(), sort_keys=True), err=True)
        raise SystemExit(error.exit_code) from exc
    setup_logging(
        level=log_level or settings.log_level,
        json_output=settings.log_json if json_logs is None else json_logs,
        log_file=str(settings.log_file) if settings.log_file else None,
    )
    ctx.obj = settings


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(path_type=Path), help="Run config (YAML).")
@click.option("--out", "out_dir", default=None, type=click.Path(path_type=Path), help="Output directory.")
@click.pass_obj
@handles_simulator_errors
def run(settings: SimulatorSettings, config_path: Path, out_dir: Path | None) -> None:
    """Run one experiment and write metrics.csv, summary.json and metrics.prom."""
    config = validate_run_config(config_path)
    summary = run_experiment(config, out_dir=out_dir, settings=settings)
    _emit(summary.model_dump(mode="json"))


@cli.command(name="verify")
@click.option(
    "--suite",
    "suites",
    multiple=True,
    type=click.Choice(sorted(SUITES)),
    help=f"Suite to run; repeatable. Default: {', '.join(DEFAULT_SUITES)}.",
)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--report", "report_path", default=None, type=click.Path(path_type=Path), help="Also write the report here.")
@handles_simulator_errors
def verify_command(suites: tuple[str, ...], seed: int, report_path: Path | None) -> None:
    """Run verification suites; exit code 0 iff every check passes."""
    report = verify(suites or None, seed=seed)
    payload = report.model_dump(mode="json")
    if report_path is not None:
        report_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _emit(payload)
    if not report.passed:
        raise SystemExit(1)


@cli.group()
def schedule() -> None:
    """Inspect schedules without running."""


@schedule.command()
@click.option("--config", "config_path", required=True, type=click.Path(path_type=Path))
@handles_simulator_errors
def preview(config_path: Path) -> None:
    """Print T_v, T_u, the learning-rate schedule and the predicted volume."""
    config = validate_run_config(config_path)
    schedules = plan_schedules(config)
    volume = predicted_volume(schedules, config.algorithm.hyper.d)
    payload = {**schedules.as_dict(), "predicted": volume.as_dict()}
    if config.algorithm.kind is AlgorithmKind.ZEROONE_ADAM:
        bound = config.schedules.sync.clip
        payload["local_step_bound"] = {"H": schedules.H, "bound": bound, "holds": check_local_step_bound(schedules, bound).passed}
    _emit(payload)


if __name__ == "__main__":
    cli()
