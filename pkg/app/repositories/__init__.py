"""
Repository package initialization.
"""
from repositories.matrix_repository import (
    MatrixMarketRepository,
    MatrixRepositoryInterface,
    SystemCache,
    get_system_cache,
)
from repositories.result_repository import ResultRepository

__all__ = [
    "MatrixMarketRepository",
    "MatrixRepositoryInterface",
    "ResultRepository",
    "SystemCache",
    "get_system_cache",
]
