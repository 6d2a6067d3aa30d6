"""
Unit tests for finite-element assembly service.
"""
import numpy as np
import pytest
import scipy.sparse as sp

from core.exceptions import ConfigError
from models.config import ProblemConfig
from services.fem_service import FORCINGS, fem_service
from services.mesh_service import mesh_service
from utils.linalg import symmetry_defect


@pytest.fixture
def square_space():
    mesh = mesh_service.build_box_mesh((0.0, 0.0), (2.0, 1.0), 4)
    return fem_service.make_space(mesh)


class TestQuadrature:
    """Test cases for tensor Gauss rules"""

    @pytest.mark.parametrize("order", [1, 2, 3, 4])
    def test_weights_sum_to_one(self, order):
        rule = fem_service.gauss_rule(order)

        assert rule.points.shape == (order * order, 2)
        assert rule.weights.sum() == pytest.approx(1.0)

    def test_exactness(self):
        """Order 3 integrates x^5 y^4 exactly on the unit square"""
        rule = fem_service.gauss_rule(3)

        value = rule.weights @ (rule.points[:, 0] ** 5 * rule.points[:, 1] ** 4)

        assert value == pytest.approx(1.0 / 30.0, rel=1e-13)


class TestElementMatrices:
    """Test cases for stiffness, mass and load assembly"""

    def test_stiffness_symmetric_with_constant_kernel(self, square_space):
        """Pure Neumann stiffness annihilates constants"""
        # Test
        stiffness = fem_service.assemble_stiffness(square_space, 3.0)

        # Assert
        assert symmetry_defect(stiffness) < 1e-14
        np.testing.assert_allclose(stiffness @ np.ones(square_space.dof_count), 0.0, atol=1e-13)

    def test_stiffness_energy_of_linear_function(self, square_space):
        """(∇x, ∇x) over [0,2]×[0,1] equals the area"""
        x = square_space.mesh.nodes[:, 0]

        stiffness = fem_service.assemble_stiffness(square_space, 1.0)

        assert x @ stiffness @ x == pytest.approx(2.0, rel=1e-12)

    def test_stiffness_rejects_nonpositive_coefficient(self, square_space):
        with pytest.raises(ValueError):
            fem_service.assemble_stiffness(square_space, 0.0)

    def test_mass_total_is_area(self, square_space):
        mass = fem_service.assemble_mass(square_space)

        assert mass.sum() == pytest.approx(2.0, rel=1e-12)
        assert symmetry_defect(mass) < 1e-14

    def test_load_of_constant(self, square_space):
        """(1, φ_i) sums to the area"""
        load = fem_service.assemble_load(square_space, FORCINGS["constant"][0])

        assert load.sum() == pytest.approx(2.0, rel=1e-12)

    def test_dirichlet_rows_and_load(self):
        """Constrained dofs get unit rows and zero load"""
        mesh = mesh_service.build_box_mesh((0.0, 0.0), (1.0, 1.0), 4)
        space = fem_service.make_space(mesh, dirichlet=True)

        stiffness = fem_service.assemble_stiffness(space, 1.0, apply_dirichlet=True)
        load = fem_service.assemble_load(space, FORCINGS["constant"][0])

        boundary = mesh.boundary_nodes
        dense = stiffness.toarray()
        np.testing.assert_allclose(dense[boundary][:, boundary], np.eye(boundary.size))
        interior = np.setdiff1d(np.arange(mesh.n_nodes), boundary)
        np.testing.assert_allclose(dense[np.ix_(boundary, interior)], 0.0)
        np.testing.assert_allclose(load[boundary], 0.0)

    def test_load_rejects_nonfinite_forcing(self, square_space):
        with pytest.raises(ValueError):
            fem_service.assemble_load(square_space, lambda x, y: np.full(np.shape(x), np.nan))


class TestCoupling:
    """Test cases for the non-matching coupling matrix"""

    def test_coincident_meshes_give_mass(self):
        """Identical meshes reproduce the mass matrix"""
        mesh = mesh_service.build_box_mesh((0.0, 0.0), (1.0, 1.0), 4)
        space = fem_service.make_space(mesh)

        coupling = fem_service.assemble_coupling(space, space, quad_order=3)

        np.testing.assert_allclose(coupling.toarray(), fem_service.assemble_mass(space).toarray(),
                                   atol=1e-14)

    def test_row_sums_match_mass(self):
        """C·1 = M·1 for a free background space (partition of unity)"""
        bg = fem_service.make_space(mesh_service.build_box_mesh((-1.0, -1.0), (1.0, 1.0), 8))
        im = fem_service.make_space(mesh_service.build_disk_mesh((0.0, 0.0), 0.3, 1))

        coupling = fem_service.assemble_coupling(bg, im)

        mass = fem_service.assemble_mass(im)
        np.testing.assert_allclose(coupling @ np.ones(bg.dof_count), mass @ np.ones(im.dof_count),
                                   atol=1e-13)

    def test_dirichlet_columns_are_zero(self, small_system):
        boundary = small_system.bg_space.mesh.boundary_nodes

        column_norms = np.abs(small_system.C).sum(axis=0).A1

        np.testing.assert_array_equal(column_norms[boundary], 0.0)

    def test_coupling_rejects_low_order(self, square_space):
        with pytest.raises(ValueError):
            fem_service.assemble_coupling(square_space, square_space, quad_order=1)


class TestSaddleSystem:
    """Test cases for full system assembly"""

    def test_unit_square_sizes(self, small_system, medium_system):
        """The unit-square geometry at two refinement pairs"""
        assert (small_system.n, small_system.m, small_system.ell) == (81, 9, 9)
        assert (medium_system.n, medium_system.m, medium_system.ell) == (289, 25, 25)
        assert small_system.dof_string == "81+9+9"

    def test_reference_problem_sizes(self):
        """The 1089+81+81 configuration used by the spectral checks"""
        problem = ProblemConfig(geometry="unit_square_41", bg_cells=32, immersed=8)

        bg, im = fem_service.build_meshes(problem)

        assert (bg.n_nodes, im.n_nodes) == (1089, 81)

    def test_blocks(self, small_system):
        """A₂ carries β₂ − β, C₂ equals M, and the immersed data vanish for constant forcing"""
        s = small_system
        ones = np.ones(s.m)

        assert symmetry_defect(s.A) < 1e-14
        np.testing.assert_allclose(s.A2 @ ones, 0.0, atol=1e-10)
        assert (s.C2 != s.M).nnz == 0
        # f₂ − f = 2 − 1 over the immersed square of area 0.09
        assert s.g.sum() == pytest.approx(0.09, rel=1e-12)
        assert s.matrix().shape == (s.size, s.size)
        assert s.rhs().shape == (s.size,)

    def test_matrix_structure(self, small_system):
        s = small_system
        dense = s.matrix().toarray()
        n, m = s.n, s.m

        np.testing.assert_allclose(dense[:n, :n], s.A.toarray())
        np.testing.assert_allclose(dense[n + m:, n:n + m], -s.C2.toarray())
        np.testing.assert_allclose(dense[n + m:, n + m:], 0.0)
        np.testing.assert_allclose(dense, dense.T)

    def test_sin_tanh_forcing_has_zero_immersed_data(self, neumann_system):
        """f₂ = f gives g = 0 and a mean-zero background load"""
        np.testing.assert_array_equal(neumann_system.g, 0.0)
        assert abs(neumann_system.f.sum()) < 1e-12
        assert neumann_system.bg_space.dirichlet is None

    def test_beta2_must_exceed_beta(self):
        problem = ProblemConfig(beta=1.0, beta2=0.5, bg_cells=8, immersed=2)

        with pytest.raises(ConfigError):
            fem_service.build_saddle_system(problem)

    def test_mesh_ratio_guard(self):
        """An immersed mesh much coarser than the background is rejected"""
        problem = ProblemConfig(geometry="unit_square_41", bg_cells=32, immersed=2)

        with pytest.raises(ConfigError):
            fem_service.build_saddle_system(problem)

    def test_disk_geometry(self):
        problem = ProblemConfig(geometry="disk_in_square", bg_cells=16, immersed=1)

        system = fem_service.build_saddle_system(problem)

        assert system.ell == system.m == 25
        assert sp.issparse(system.C)


class TestInterpolation:
    """Test cases for evaluation and norms"""

    def test_interpolate_bilinear_function(self, square_space, rng):
        """Q1 reproduces x·y exactly on a tensor mesh"""
        nodes = square_space.mesh.nodes
        coeffs = nodes[:, 0] * nodes[:, 1]
        points = rng.random((15, 2)) * np.array([2.0, 1.0])

        values = fem_service.interpolate(square_space, coeffs, points)

        np.testing.assert_allclose(values, points[:, 0] * points[:, 1], atol=1e-13)

    def test_l2_norm_of_constant(self, square_space):
        value = fem_service.l2_norm(square_space, np.ones(square_space.dof_count))

        assert value == pytest.approx(np.sqrt(2.0))
