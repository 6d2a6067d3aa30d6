"""
Core configuration settings for the FD-DLM augmented Lagrangian toolkit.

Contains all solver, AMG, assembly and spectral settings using Pydantic
BaseSettings. Every field can be overridden through an ``FDAL_``-prefixed
environment variable or a ``.env`` file.
"""
from typing import Literal

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    # 服務配置
    debug: bool = False
    log_level: str = "INFO"
    output_dir: str = "results"
    seed: int = 0
    threads: int = 1

    # Outer Krylov solver
    outer_rtol: float = 1e-10
    outer_atol: float = 1e-10
    outer_restart: int = 30
    outer_maxit: int = 500
    baseline_restart: int = 50

    # Inner CG solves
    inner_rtol: float = 1e-2
    inner_maxit: int = 200

    # Smoothed-aggregation AMG
    amg_strength_theta: float = 1e-3
    amg_smoother_sweeps: int = 2
    amg_max_coarse: int = 200
    amg_prolongation_omega: float = 2.0 / 3.0

    # Assembly
    coupling_quad_order: int = 3
    mesh_ratio_min: float = 0.5
    mesh_ratio_max: float = 2.0

    # Dense eigensolvers
    eig_backend: Literal["native", "lapack"] = "native"
    eig_one_tol: float = 1e-6
    dense_size_limit: int = 2000
    nonsym_size_limit: int = 4000

    # 快取配置
    cache_max_size: int = 16
    cache_ttl_seconds: int = 3600  # 1 小時

    model_config = SettingsConfigDict(env_file=".env", env_prefix="FDAL_", extra="ignore")

    @property
    def effective_log_level(self) -> str:
        """Log level honouring the debug switch"""
        return "DEBUG" if self.debug else self.log_level.upper()


settings = Settings()
