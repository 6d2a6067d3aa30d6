"""
Unit and integration tests for the augmented Lagrangian service.
"""
from unittest.mock import patch

import numpy as np
import pytest
import scipy.sparse as sp
from pydantic import ValidationError

from core.config import settings
from core.exceptions import ConfigError, NonConvergence
from models.config import PreconditionerSpec, ProblemConfig, SolverOptions
from repositories.matrix_repository import get_system_cache
from services.al_service import (
    ALService,
    BaselineTriangularPreconditioner,
    IdealALPreconditioner,
    ModifiedALPreconditioner,
    al_service,
    augment_system,
    baseline_triangular_apply,
    exact_block_solve,
    gamma_recipe,
    ideal_al_apply,
    leading_block,
    mal_apply,
)


def dense(mat):
    return mat.toarray() if sp.issparse(mat) else np.asarray(mat)


@pytest.fixture(scope="module")
def direct_solution(small_system):
    return al_service.solve_direct(small_system)


class TestAugmentation:
    """Test cases for the augmented system"""

    @pytest.mark.parametrize("w_mode", ["exact", "diag"])
    def test_solution_is_preserved(self, small_system, direct_solution, w_mode):
        """The original solution solves the augmented system"""
        # Setup
        x = np.concatenate([direct_solution.u, direct_solution.u2, direct_solution.lam])

        # Test
        aug = augment_system(small_system, 10.0, 0.01, w_mode)

        # Assert
        residual = np.linalg.norm(aug.matvec(x) - aug.rhs()) / np.linalg.norm(aug.rhs())
        assert residual < 1e-8

    def test_diag_blocks_are_sparse(self, small_system):
        """diag(W) keeps every block in CSR form"""
        aug = augment_system(small_system, 10.0, 0.01, "diag")

        s = small_system
        d = np.asarray(s.M.multiply(s.M).sum(axis=1)).ravel()
        expected = s.A.toarray() + 10.0 * s.C.toarray().T @ np.diag(1.0 / d) @ s.C.toarray()
        assert aug.is_sparse
        np.testing.assert_allclose(aug.A11.toarray(), expected, atol=1e-12)

    def test_exact_blocks(self, small_system):
        """With W = M² and C₂ = M the (2,2) block is A₂ + γ₂I"""
        s = small_system
        aug = augment_system(s, 10.0, 0.5, "exact")
        m_inv = np.linalg.inv(s.M.toarray())
        w_inv = m_inv @ m_inv
        c = s.C.toarray()

        assert not aug.is_sparse
        assert sp.issparse(aug.A22)
        np.testing.assert_allclose(aug.A22.toarray(), s.A2.toarray() + 0.5 * np.eye(s.m), atol=1e-12)
        np.testing.assert_allclose(aug.dense_block("A11"), s.A.toarray() + 10.0 * c.T @ w_inv @ c,
                                   rtol=1e-8, atol=1e-8)
        np.testing.assert_allclose(aug.dense_block("A21"), -0.5 * s.M.toarray() @ w_inv @ c,
                                   rtol=1e-8, atol=1e-10)

    def test_to_dense_matches_matvec(self, small_system, rng):
        aug = augment_system(small_system, 3.0, 3.0, "exact")
        x = rng.standard_normal(small_system.size)

        np.testing.assert_allclose(aug.to_dense() @ x, aug.matvec(x), rtol=1e-10, atol=1e-10)
        np.testing.assert_allclose(aug.operator() @ x, aug.matvec(x))

    def test_negative_gamma(self, small_system):
        with pytest.raises(ConfigError):
            augment_system(small_system, -1.0, 1.0)

    def test_zero_gamma_is_original_system(self, small_system):
        aug = augment_system(small_system, 0.0, 0.0, "diag")

        np.testing.assert_allclose(aug.to_dense(), small_system.matrix().toarray(), atol=1e-14)


class TestExactBlockSolve:
    """Test cases for direct block solves"""

    @pytest.mark.parametrize("block", ["A11", "A22", "top"])
    def test_dense_path(self, small_system, rng, block):
        aug = augment_system(small_system, 10.0, 10.0, "exact")
        mat = aug.gamma_block_dense() if block == "top" else aug.dense_block(block)
        rhs = rng.standard_normal(mat.shape[0])

        solve = exact_block_solve(aug, block)

        np.testing.assert_allclose(mat @ solve(rhs), rhs, atol=1e-8)

    @pytest.mark.parametrize("block", ["A11", "top"])
    def test_extended_matrix_path(self, small_system, rng, block):
        """Above the dense limit the Schur complement of the extended matrix is used"""
        aug = augment_system(small_system, 10.0, 10.0, "exact")
        mat = aug.gamma_block_dense() if block == "top" else aug.dense_block(block)
        rhs = rng.standard_normal(mat.shape[0])

        with patch.object(settings, "dense_size_limit", 0):
            solve = exact_block_solve(aug, block)

        np.testing.assert_allclose(solve(rhs), np.linalg.solve(mat, rhs), rtol=1e-7, atol=1e-10)

    def test_unknown_block(self, small_system):
        aug = augment_system(small_system, 1.0, 1.0, "diag")

        with pytest.raises(ValueError):
            exact_block_solve(aug, "A12")

    def test_leading_block_sparse(self, small_system):
        aug = augment_system(small_system, 1.0, 1.0, "diag")

        block = leading_block(aug)

        assert sp.issparse(block)
        np.testing.assert_allclose(block.toarray(), aug.gamma_block_dense())


class TestPreconditioners:
    """Test cases for preconditioner applications against dense oracles"""

    def test_ideal_al_apply(self, small_system, rng):
        """z = P⁻¹r for P = [[A_γ, Bᵀ], [0, −W/γ]]"""
        # Setup
        gamma = 10.0
        aug = augment_system(small_system, gamma, gamma, "exact")
        spec = PreconditionerSpec(variant="ideal_al", gamma=gamma)
        top = small_system.n + small_system.m
        P = np.zeros((small_system.size, small_system.size))
        P[:top, :top] = aug.gamma_block_dense()
        P[:top, top:] = dense(small_system.B).T
        P[top:, top:] = -aug.weight.dense() / gamma
        z_true = rng.standard_normal(small_system.size)

        # Test
        z = ideal_al_apply(aug, spec, P @ z_true)

        # Assert
        np.testing.assert_allclose(z, z_true, rtol=1e-6, atol=1e-8)

    def test_mal_apply(self, small_system, rng):
        """Upper block-triangular solve, bottom-up"""
        s = small_system
        aug = augment_system(s, 10.0, 0.01, "exact")
        spec = PreconditionerSpec(variant="mal", gamma1=10.0, gamma2=0.01)
        n, m = s.n, s.m
        P = np.zeros((s.size, s.size))
        P[:n, :n] = aug.dense_block("A11")
        P[:n, n:n + m] = aug.dense_block("A12")
        P[:n, n + m:] = s.C.toarray().T
        P[n:n + m, n:n + m] = aug.dense_block("A22")
        P[n:n + m, n + m:] = -s.C2.toarray().T
        P[n + m:, n + m:] = -aug.weight.dense() / 10.0
        z_true = rng.standard_normal(s.size)

        z = mal_apply(aug, spec, P @ z_true)

        np.testing.assert_allclose(z, z_true, rtol=1e-6, atol=1e-8)

    def test_mal_diag_apply(self, small_system, rng):
        """With single-level AMG the CG inner solves are exact up to their tolerance"""
        s = small_system
        aug = augment_system(s, 10.0, 0.01, "diag")
        spec = PreconditionerSpec(variant="mal_diag", gamma1=10.0, gamma2=0.01, inner_rtol=1e-12)
        prec = ModifiedALPreconditioner(aug, spec)
        n, m = s.n, s.m
        P = np.zeros((s.size, s.size))
        P[:n, :n] = aug.A11.toarray()
        P[:n, n:n + m] = aug.A12.toarray()
        P[:n, n + m:] = s.C.toarray().T
        P[n:n + m, n:n + m] = aug.A22.toarray()
        P[n:n + m, n + m:] = -s.C2.toarray().T
        P[n + m:, n + m:] = -aug.weight.dense() / 10.0
        z_true = rng.standard_normal(s.size)

        z = prec(P @ z_true)

        np.testing.assert_allclose(z, z_true, rtol=1e-6, atol=1e-8)
        assert prec.tracked.solves == 1
        assert prec.lower.solves == 1

    def test_baseline_apply(self, small_system, rng):
        """[[A, (0, Cᵀ)], [0, K]] with K = [[A₂, −C₂ᵀ], [−C₂, 0]]"""
        s = small_system
        n, m = s.n, s.m
        P = np.zeros((s.size, s.size))
        P[:n, :n] = s.A.toarray()
        P[:n, n + m:] = s.C.toarray().T
        P[n:n + m, n:n + m] = s.A2.toarray()
        P[n:n + m, n + m:] = -s.C2.toarray().T
        P[n + m:, n:n + m] = -s.C2.toarray()
        z_true = rng.standard_normal(s.size)

        z = baseline_triangular_apply(s, P @ z_true)

        np.testing.assert_allclose(z, z_true, rtol=1e-6, atol=1e-8)

    def test_ideal_requires_equal_gammas(self, small_system):
        aug = augment_system(small_system, 10.0, 1.0, "exact")

        with pytest.raises(ConfigError):
            IdealALPreconditioner(aug, PreconditionerSpec(variant="ideal_al", gamma=10.0))

    def test_cg_amg_requires_diag_weight(self, small_system):
        aug = augment_system(small_system, 10.0, 0.01, "exact")

        with pytest.raises(ConfigError):
            ModifiedALPreconditioner(aug, PreconditionerSpec(variant="mal_diag"))

    def test_make_preconditioner(self, small_system):
        aug = augment_system(small_system, 1.0, 1.0, "exact")

        assert al_service.make_preconditioner(aug, PreconditionerSpec(variant="none")) is None
        assert isinstance(
            al_service.make_preconditioner(aug, PreconditionerSpec(variant="baseline_triangular")),
            BaselineTriangularPreconditioner,
        )

    def test_matrix_input(self, small_system, rng):
        """Preconditioners apply column-wise to 2-D input"""
        aug = augment_system(small_system, 5.0, 5.0, "exact")
        prec = IdealALPreconditioner(aug, PreconditionerSpec(variant="ideal_al", gamma=5.0))
        block = rng.standard_normal((small_system.size, 3))

        result = prec(block)

        np.testing.assert_allclose(result[:, 2], prec(block[:, 2]), rtol=1e-10, atol=1e-12)


class TestPreconditionerSpec:
    """Test cases for preconditioner configuration"""

    def test_defaults_per_variant(self):
        assert PreconditionerSpec(variant="ideal_al", gamma=3.0).gammas == (3.0, 3.0)
        assert PreconditionerSpec(variant="mal_diag").gammas == (10.0, 1e-2)
        assert PreconditionerSpec(variant="baseline_triangular").gammas == (0.0, 0.0)
        assert PreconditionerSpec(variant="mal").w_mode == "exact"
        assert PreconditionerSpec(variant="mal_diag").w_mode == "diag"
        assert PreconditionerSpec(variant="inexact_al").w_mode == "diag"
        assert PreconditionerSpec(variant="mal").resolved_inner_solver == "exact"
        assert PreconditionerSpec(variant="inexact_al").resolved_inner_solver == "cg_amg"

    def test_invalid_combinations(self):
        with pytest.raises(ValidationError):
            PreconditionerSpec(variant="mal", inner_solver="cg_amg")
        with pytest.raises(ValidationError):
            PreconditionerSpec(variant="ideal_al", gamma=0.0)
        with pytest.raises(ValidationError):
            PreconditionerSpec(variant="mal_diag", gamma2=-1.0)

    def test_gamma_recipe(self):
        assert gamma_recipe(1.0, 100.0) == pytest.approx(1.0 / 99.0)
        assert gamma_recipe(1.0, 1.5) == 1.0


class TestSolveInterfaceProblem:
    """Integration tests for the outer solve"""

    @pytest.mark.parametrize("variant", ["ideal_al", "inexact_al", "mal", "mal_diag", "baseline_triangular"])
    def test_variants_agree_with_direct_solve(self, small_problem, small_system, direct_solution, variant):
        """Every preconditioned solve reproduces the sparse direct solution"""
        # Setup
        spec = PreconditionerSpec(variant=variant, gamma=10.0, gamma1=10.0, gamma2=0.01)

        # Test
        result = al_service.solve_interface_problem(small_problem, spec, system=small_system)

        # Assert
        report = result.report
        assert report.converged
        assert report.variant == variant
        scale = np.linalg.norm(direct_solution.u)
        assert np.linalg.norm(result.u - direct_solution.u) <= 1e-5 * scale
        assert report.original_residual <= 1e-4
        assert report.constraint_residual <= 1e-6

    def test_ideal_al_iteration_bound(self, small_problem, small_system):
        """n + m unit eigenvalues leave at most ℓ + 1 Krylov steps"""
        spec = PreconditionerSpec(variant="ideal_al", gamma=10.0)

        report = al_service.solve_interface_problem(small_problem, spec, system=small_system).report

        assert report.iterations <= small_system.ell + 6
        assert report.inner_solves == report.iterations
        assert report.inner_iterations_avg == 0.0

    def test_inexact_inner_counts(self, small_problem, small_system):
        spec = PreconditionerSpec(variant="inexact_al", gamma=10.0)

        report = al_service.solve_interface_problem(small_problem, spec, system=small_system).report

        assert report.inner_solves == report.iterations
        assert report.inner_iterations_avg >= 1.0

    def test_neumann_problem(self, neumann_problem, neumann_system):
        """Natural conditions: the solution is normalized to mean(u) = 0"""
        spec = PreconditionerSpec(variant="mal_diag", gamma1=10.0, gamma2=0.01)

        result = al_service.solve_interface_problem(neumann_problem, spec, system=neumann_system)

        assert result.report.converged
        assert abs(np.mean(result.u)) < 1e-12
        assert result.report.original_residual <= 1e-4
        assert result.report.constraint_residual <= 1e-6

    @pytest.mark.parametrize("variant", ["ideal_al", "inexact_al", "baseline_triangular"])
    def test_neumann_rejects_dirichlet_only_variants(self, neumann_problem, variant):
        with pytest.raises(ConfigError):
            al_service.solve_interface_problem(neumann_problem, PreconditionerSpec(variant=variant))

    def test_direct_solve_needs_dirichlet(self, neumann_system):
        with pytest.raises(ConfigError):
            al_service.solve_direct(neumann_system)

    def test_non_convergence_raises(self, small_problem, small_system):
        options = SolverOptions(maxit=1)

        with pytest.raises(NonConvergence) as exc_info:
            al_service.solve_interface_problem(small_problem, PreconditionerSpec(variant="mal_diag"),
                                               options, small_system)

        assert exc_info.value.report is not None
        assert exc_info.value.report.iterations == 1
        assert not exc_info.value.report.converged

    def test_non_convergence_reported(self, small_problem, small_system):
        options = SolverOptions(maxit=1, raise_on_failure=False)

        result = al_service.solve_interface_problem(small_problem, PreconditionerSpec(variant="mal_diag"),
                                                    options, small_system)

        assert not result.report.converged

    def test_get_system_uses_cache(self, small_problem):
        service = ALService()

        first = service.get_system(small_problem)
        second = service.get_system(small_problem)

        assert first is second
        assert get_system_cache().stats()["hits"] == 1

    def test_direct_solution_residuals(self, direct_solution):
        assert direct_solution.report.original_residual < 1e-10
        assert direct_solution.report.constraint_residual < 1e-10

    def test_ideal_and_modified_solutions_agree(self, small_problem, small_system):
        """Ideal and modified AL reach the same u and both satisfy the coupling constraint"""
        # Setup
        options = SolverOptions(rtol=1e-12)

        # Test
        ideal = al_service.solve_interface_problem(small_problem, PreconditionerSpec(variant="ideal_al", gamma=10.0),
                                                   options, small_system)
        modified = al_service.solve_interface_problem(
            small_problem, PreconditionerSpec(variant="mal", gamma1=10.0, gamma2=1e-2), options, small_system)

        # Assert
        assert np.linalg.norm(ideal.u - modified.u) <= 1e-7 * np.linalg.norm(ideal.u)
        for result in (ideal, modified):
            assert result.report.constraint_residual <= 1e-8


@pytest.mark.slow
class TestIterationRobustness:
    """Outer iteration counts over refinement levels, jumps and geometries"""

    @pytest.mark.parametrize("geometry,levels", [
        ("square_in_square", [(16, 5), (32, 10), (64, 20)]),
        ("disk_in_square", [(16, 2), (32, 3), (64, 4)]),
    ])
    def test_ideal_al_counts(self, geometry, levels):
        """Spread ≤ 5 across levels, ≤ 10 across beta2, and never above 50"""
        # Setup
        spec = PreconditionerSpec(variant="ideal_al", gamma=10.0)
        beta2_list = [10.0, 1e3, 1e7]

        # Test
        counts = np.zeros((len(levels), len(beta2_list)), dtype=int)
        for i, (bg_cells, immersed) in enumerate(levels):
            for j, beta2 in enumerate(beta2_list):
                problem = ProblemConfig(geometry=geometry, bg_cells=bg_cells, immersed=immersed, beta2=beta2)
                counts[i, j] = al_service.solve_interface_problem(problem, spec).report.iterations

        # Assert
        assert counts.max() <= 50
        assert np.all(np.ptp(counts, axis=0) <= 5)
        assert np.all(np.ptp(counts, axis=1) <= 10)

    def test_mal_diag_counts(self):
        """Outer counts vary by at most 20% across levels; inner CG stays cheap"""
        levels = [(16, 5), (32, 10), (64, 20)]

        for beta2 in (1e3, 1e7):
            reports = []
            for bg_cells, immersed in levels:
                problem = ProblemConfig(geometry="square_in_square", bg_cells=bg_cells,
                                        immersed=immersed, beta2=beta2)
                spec = PreconditionerSpec(variant="mal_diag", gamma1=10.0, gamma2=1e-2)
                reports.append(al_service.solve_interface_problem(problem, spec).report)
            outer = [report.iterations for report in reports]
            assert max(outer) <= 1.2 * min(outer)
            assert all(report.inner_iterations_avg <= 40 for report in reports)

    def test_baseline_breaks_down_at_large_jump(self):
        """On the disk at beta2 = 1e7 the triangular baseline fails where MAL-diag converges"""
        # Setup
        problem = ProblemConfig(geometry="disk_in_square", bg_cells=32, immersed=3, beta2=1e7)
        options = SolverOptions(maxit=500, raise_on_failure=False)

        # Test
        baseline = al_service.solve_interface_problem(
            problem, PreconditionerSpec(variant="baseline_triangular"), options).report
        modified = al_service.solve_interface_problem(
            problem, PreconditionerSpec(variant="mal_diag", gamma1=10.0, gamma2=1e-2), options).report

        # Assert
        assert not baseline.converged
        assert modified.converged

    def test_baseline_competitive_at_small_jump(self):
        problem = ProblemConfig(geometry="disk_in_square", bg_cells=32, immersed=3, beta2=10.0)
        options = SolverOptions(maxit=500)

        baseline = al_service.solve_interface_problem(
            problem, PreconditionerSpec(variant="baseline_triangular"), options).report
        modified = al_service.solve_interface_problem(
            problem, PreconditionerSpec(variant="mal_diag", gamma1=10.0, gamma2=1e-3), options).report

        ratio = baseline.iterations / modified.iterations
        assert 1 / 3 <= ratio <= 3
