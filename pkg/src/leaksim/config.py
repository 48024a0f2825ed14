"""Pydantic Settings configuration for the leakage simulator."""

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Simulator configuration.

    Reads from environment variables with LEAKSIM_ prefix or .env file.
    """

    tolerance: float = Field(
        default=1e-10, description="Trace-preservation and incoherence tolerance"
    )
    truncation_tolerance: float = Field(
        default=1e-10, description="Max-abs entry below which an RPA block is dropped"
    )
    normalization_tolerance: float = Field(
        default=1e-8, description="Allowed deficit of Born probabilities before a trajectory aborts"
    )
    workers: int = Field(default=1, ge=1, description="Worker processes for trajectory ensembles")
    seed: int = Field(default=0, ge=0, description="Default master seed")
    out_dir: str = Field(default="results", description="Directory for result files")
    p_dem: float = Field(
        default=1e-3, gt=0.0, lt=0.5, description="Depolarizing strength used to build the decoder graph"
    )
    fit_skip_rounds: int = Field(
        default=2, ge=0, description="Leading rounds excluded from logical error fits"
    )
    log_level: str = Field(default="INFO", description="Root log level for the CLI")

    model_config = SettingsConfigDict(
        env_prefix="LEAKSIM_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )


def get_settings() -> Settings:
    """Get configuration from environment variables or .env file."""
    return Settings()
