from typing import Optional
from functools import lru_cache
from pathlib import Path

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """
    Application settings.
    Loads from STOCHHAM_-prefixed environment variables with fallback to default values.
    """

    PROJECT_NAME: str = "stochham"
    VERSION: str = "1.0.0"
    DESCRIPTION: str = "Stochastic Hamiltonian simulation and structural diagnostics"

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    LOG_FILE: Optional[str] = None
    LOG_JSON: bool = False

    # Parallelism
    THREADS: int = 1
    BATCH_SIZE: int = 256

    # Integration
    MAX_STEPS: int = 10_000_000
    BLOWUP_THRESHOLD: float = 1e8
    FD_STEP: float = 1e-5

    # Monte Carlo
    EXPLODED_CAP: float = 1e-3
    MAX_RECORDED_VALUES: int = 200_000_000
    MAX_BATCH_INCREMENTS: int = 20_000_000

    # Artifacts
    TRAJECTORY_CAP: int = 100
    SUMMARY_SCHEMA_VERSION: str = "1"

    model_config = SettingsConfigDict(
        env_prefix="STOCHHAM_",
        env_file=".env",
        case_sensitive=True,
        extra="ignore",
    )


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance"""
    return Settings()


def get_base_dir() -> Path:
    """Get the base directory of the project"""
    return Path(__file__).resolve().parent.parent


def get_log_dir() -> Path:
    """Get the log directory path"""
    log_dir = get_base_dir() / "logs"
    log_dir.mkdir(parents=True, exist_ok=True)
    return log_dir
