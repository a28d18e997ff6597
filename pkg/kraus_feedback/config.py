"""Project settings."""
import os
from typing import Any, Dict

from pydantic import BaseSettings, validator


class Settings(BaseSettings):
    """Settings class."""

    BASE_DIR: str = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    TESTING: bool = False
    KF_ENVIRONMENT: str = "dev"
    KF_LISTEN: str = "http://0.0.0.0:8080"
    KF_LOG_LEVEL: str = "INFO"

    # Sampling and pools
    KF_WORKERS: int = 1
    KF_SEED: int = 20240417
    KF_SAMPLE_BUDGET: int = 100_000
    KF_CHUNK_SIZE: int = 2048

    # Resource guards
    KF_MAX_TERMS: int = 10**8
    KF_ORACLE_MAX_TERMS: int = 10**5
    KF_ORACLE_MAX_DIM: int = 3

    # Tolerances
    TOL_CPTP: float = 1e-9
    TOL_UNITARY: float = 1e-10
    TOL_RANK: float = 1e-10
    TOL_CHOI: float = 1e-8
    TOL_PRUNE: float = 1e-12
    TOL_EQUIVALENCE: float = 1e-8

    @validator("KF_WORKERS", allow_reuse=True)
    def resolve_workers(cls, v: int) -> int:
        """Resolve worker count, 0 means one worker per cpu."""
        if v < 0:
            raise ValueError("KF_WORKERS must be >= 0")
        return v or os.cpu_count() or 1

    @validator(
        "KF_SAMPLE_BUDGET",
        "KF_CHUNK_SIZE",
        "KF_MAX_TERMS",
        "KF_ORACLE_MAX_TERMS",
        "KF_ORACLE_MAX_DIM",
        allow_reuse=True,
    )
    def check_positive(cls, v: int, field: Any) -> int:
        """Budgets and guards must be positive."""
        if v < 1:
            raise ValueError(f"{field.name} must be >= 1")
        return v

    @validator("KF_ENVIRONMENT", allow_reuse=True)
    def check_environment(cls, v: str, values: Dict[str, Any]) -> str:
        """Tests always run in test environment."""
        if values.get("TESTING"):
            return "test"
        if v not in ("dev", "test", "prod"):
            raise ValueError("KF_ENVIRONMENT must be dev, test or prod")
        return v


settings = Settings()
