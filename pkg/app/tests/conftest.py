"""
Pytest configuration and fixtures for the FD-DLM toolkit tests.
"""
import os
from unittest.mock import patch

import numpy as np
import pytest
import scipy.sparse as sp

from models.config import ExperimentConfig, ProblemConfig
from repositories.matrix_repository import MatrixMarketRepository, get_system_cache
from repositories.result_repository import ResultRepository
from services.fem_service import fem_service


@pytest.fixture(scope="session")
def small_problem():
    """81+9+9 unit-square problem with beta2 = 100"""
    return ProblemConfig(geometry="unit_square_41", bg_cells=8, immersed=2, beta=1.0, beta2=100.0)


@pytest.fixture(scope="session")
def small_system(small_problem):
    return fem_service.build_saddle_system(small_problem)


@pytest.fixture(scope="session")
def medium_problem():
    """289+25+25 unit-square problem with beta2 = 100"""
    return ProblemConfig(geometry="unit_square_41", bg_cells=16, immersed=4, beta=1.0, beta2=100.0)


@pytest.fixture(scope="session")
def medium_system(medium_problem):
    return fem_service.build_saddle_system(medium_problem)


@pytest.fixture(scope="session")
def neumann_problem():
    """Square-in-square problem with natural boundary conditions and sin/tanh data"""
    return ProblemConfig(geometry="square_in_square", bg_cells=8, immersed=2, beta=1.0,
                         beta2=10.0, forcing="sin_tanh", bc="neumann_zero")


@pytest.fixture(scope="session")
def neumann_system(neumann_problem):
    return fem_service.build_saddle_system(neumann_problem)


@pytest.fixture
def small_experiment():
    """Two-level, two-column sweep small enough for unit tests"""
    return ExperimentConfig(
        name="small",
        geometry="unit_square_41",
        refinement_levels=[(8, 2), (16, 4)],
        beta2_list=[10.0, 100.0],
        variant="mal_diag",
    )


@pytest.fixture
def laplacian_1d():
    """SPD tridiagonal matrix of size 50"""
    n = 50
    return sp.diags([-np.ones(n - 1), 2.0 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr")


@pytest.fixture
def matrix_repo(tmp_path):
    return MatrixMarketRepository(tmp_path / "matrices")


@pytest.fixture
def result_repo(tmp_path):
    return ResultRepository(tmp_path / "results")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def setup_test_environment():
    """Setup test environment before each test"""
    get_system_cache().clear()
    with patch.dict(os.environ, {
        'FDAL_OUTPUT_DIR': 'test_results',
        'FDAL_LOG_LEVEL': 'WARNING',
        'FDAL_EIG_BACKEND': 'native',
    }):
        yield
    get_system_cache().clear()
