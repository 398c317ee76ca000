from __future__ import annotations

from pathlib import Path

from dotenv import load_dotenv
from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

load_dotenv()


class SimulatorSettings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="ZEROONE_", env_file=".env", extra="ignore")

    output_dir: Path | None = Field(default=None, description="Overrides the output directory of every run.")
    log_level: str = "INFO"
    log_json: bool = False
    log_file: Path | None = None
    worker_threads: int = Field(default=1, ge=1, description="Threads used to compute worker gradients.")

    @field_validator("log_level")
    @classmethod
    def _upper(cls, value: str) -> str:
        value = value.upper()
        if value not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            raise ValueError(f"unknown log level {value}")
        return value


def get_settings() -> SimulatorSettings:
    return SimulatorSettings()
