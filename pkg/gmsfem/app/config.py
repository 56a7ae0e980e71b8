"""Solver settings loaded from environment variables."""

from functools import lru_cache

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Numerical and runtime settings loaded from environment variables."""

    # Logging
    log_level: str = "INFO"
    log_json: bool = True

    # Linear solvers
    solver_tol: float = 1e-10
    fine_tol: float = 1e-12  # global fine-grid solve
    max_cg_iter: int = 50000
    dense_limit: int = 2000  # dense Cholesky at or below this dimension

    # Coarse space / eigen problems
    pivot_tol: float = 1e-12
    symmetry_tol: float = 1e-12
    kappa_tilde_floor: float = 1e-12  # relative to max kappa_tilde

    # Adaptive loop: the exact rules stop at or below exact_floor * ||u||_V
    exact_floor: float = 1e-3

    # Thread pool size for per-neighborhood work
    workers: int = 1

    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="GMSFEM_",
        case_sensitive=False,
    )


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()
