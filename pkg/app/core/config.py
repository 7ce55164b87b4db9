import os

from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    # Environment
    environment: str = "development"
    debug: bool = True

    # API
    api_host: str = "0.0.0.0"
    api_port: int = 8000
    api_reload: bool = True

    # Plane-wave bases
    default_cutoff: float = 8.0
    response_cutoff: float = 2.0
    coefficient_tol: float = 1e-10

    # Bands / response
    response_grid_p: int = 8
    response_inner_grid: int = 6
    gap_tol: float = 1e-6

    # SCF
    scf_tol: float = 1e-8
    scf_max_iter: int = 200
    mixing_alpha: float = 0.5
    anderson_depth: int = 5

    # Lattice sums
    quadrature_order: int = 24
    ewald_precision: float = 1e-16
    madelung_tol: float = 1e-8
    multipole_base_index: int = 16
    bump_radius_fraction: float = 0.4

    model_config = {
        "env_file": ".env",
        "env_prefix": "SUPERCORR_",
        "case_sensitive": False,
    }


def get_settings() -> Settings:
    """Get settings based on environment"""
    env = os.getenv("ENVIRONMENT", "development")

    if env == "production":
        settings = Settings(_env_file=".env.prod")
    elif env == "test":
        settings = Settings(_env_file=".env.test")
    else:
        settings = Settings(_env_file=".env.dev")

    return settings


# Create settings instance
settings = get_settings()
