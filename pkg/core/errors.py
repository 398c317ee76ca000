from __future__ import annotations

from dataclasses import dataclass
from typing import Any


# ---------------------------------------------------------------------------
# Structured error detail
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ErrorDetail:
    code: str
    message: str
    field: str | None = None

    def as_dict(self) -> dict[str, Any]:
        return {"code": self.code, "message": self.message, "field": self.field}


# ---------------------------------------------------------------------------
# Exception hierarchy
# ---------------------------------------------------------------------------

class SimulatorError(Exception):
    """Base for all simulator-level exceptions."""
    exit_code: int = 1
    error_code: str = "SIMULATOR_ERROR"

    def __init__(self, message: str, details: list[ErrorDetail] | None = None):
        super().__init__(message)
        self.message = message
        self.details = details or []

    def as_dict(self) -> dict[str, Any]:
        return {
            "error": self.error_code,
            "message": self.message,
            "details": [d.as_dict() for d in self.details],
        }


class DimensionMismatchError(SimulatorError):
    error_code = "DIMENSION_MISMATCH"


class NonPositiveDenominatorError(SimulatorError):
    error_code = "NONPOSITIVE_DENOMINATOR"


class PackedFormatError(SimulatorError):
    error_code = "PACKED_FORMAT"


class WorkerCountError(SimulatorError):
    error_code = "WORKER_COUNT"


class ScheduleError(SimulatorError):
    error_code = "SCHEDULE_OUT_OF_RANGE"


class UnknownScheduleError(ScheduleError):
    error_code = "UNKNOWN_SCHEDULE"


class ConfigError(SimulatorError):
    exit_code = 2
    error_code = "INVALID_CONFIG"


class NumericalError(SimulatorError):
    """Raised when a non-finite value shows up in any optimizer state."""
    exit_code = 3
    error_code = "NON_FINITE_STATE"

    def __init__(self, message: str, step: int | None = None, field: str | None = None):
        detail = ErrorDetail(code=self.error_code, message=message, field=field)
        super().__init__(message if step is None else f"step {step}: {message}", [detail])
        self.step = step
        self.field = field


def config_error_from_validation(exc: Exception, source: str) -> ConfigError:
    """Wrap a pydantic ValidationError into a ConfigError with one detail per field."""
    details: list[ErrorDetail] = []
    errors = getattr(exc, "errors", None)
    if callable(errors):
        for err in errors():
            loc = ".".join(str(part) for part in err.get("loc", ())) or None
            details.append(
                ErrorDetail(
                    code=str(err.get("type", "validation")),
                    message=str(err.get("msg", "Validation error")),
                    field=loc,
                )
            )
    return ConfigError(f"Invalid run configuration in {source}", details)
