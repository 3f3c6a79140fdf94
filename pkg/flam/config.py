"""Configuration management for FLAM."""

from functools import lru_cache
import os
from pathlib import Path

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Settings loaded from FLAM_* environment variables (or flam/.env)."""

    model_config = SettingsConfigDict(
        env_prefix="FLAM_",
        # Look for .env in the package directory
        env_file=os.path.join(Path(__file__).parent, ".env"),
        case_sensitive=False,
        extra="ignore",
    )

    # Execution
    threads: int = Field(default=1, ge=1)
    log_level: str = "WARNING"

    # Block coordinate descent
    tol: float = Field(default=1e-8, gt=0)
    max_sweeps: int = Field(default=1000, ge=1)
    active_set_cycle: int = Field(default=10, ge=1)

    # Lambda grid
    n_lambda: int = Field(default=50, ge=2)
    lambda_min_ratio: float = Field(default=1e-3, gt=0, lt=1)

    # Degrees of freedom ridge stabilizer
    epsilon: float = Field(default=1e-8, ge=0)

    # Generalized gradient descent
    glm_tol: float = Field(default=1e-8, gt=0)
    glm_max_iter: int = Field(default=5000, ge=1)

    # Cross-validation
    cv_folds: int = Field(default=10, ge=2)


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()
