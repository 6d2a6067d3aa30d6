"""
Finite-element assembly service for the FD-DLM augmented Lagrangian toolkit.

Q1 stiffness, mass and load assembly on a single mesh, the non-matching
coupling matrix between background and immersed meshes, and assembly of
the full saddle-point system from a ProblemConfig.

All element loops are vectorized over cells with numpy.einsum; global
matrices are reduced through scipy COO → CSR conversion, which sums
duplicate entries in storage (cell-index) order and is therefore
reproducible run to run.
"""
import logging
import time
from typing import Callable, Dict, Tuple

import numpy as np
import scipy.sparse as sp

from core.config import settings
from core.exceptions import ConfigError
from models.config import ProblemConfig
from models.mesh import Mesh
from models.system import FeSpace, QuadratureRule, SaddleSystem
from services.mesh_service import mesh_service, shape_gradients, shape_values
from utils.linalg import finalize_csr

logger = logging.getLogger(__name__)

ScalarField = Callable[[np.ndarray, np.ndarray], np.ndarray]

# geometry name -> (background box, immersed description)
GEOMETRIES: Dict[str, dict] = {
    "square_in_square": {"box": ((-1.0, -1.0), (1.0, 1.0)),
                         "immersed": ("box", (-0.14, -0.14), (0.47, 0.47))},
    "disk_in_square": {"box": ((-1.0, -1.0), (1.0, 1.0)),
                       "immersed": ("disk", (0.0, 0.0), 0.3)},
    "unit_square_41": {"box": ((0.0, 0.0), (1.0, 1.0)),
                       "immersed": ("box", (0.2, 0.2), (0.5, 0.5))},
}


def constant_field(value: float) -> ScalarField:
    def field(x, y):
        return np.full(np.shape(x), value, dtype=float)
    return field


def sin_tanh(x, y):
    return np.sin(np.pi * x) + np.tanh(y)


FORCINGS: Dict[str, Tuple[ScalarField, ScalarField]] = {
    "constant": (constant_field(1.0), constant_field(2.0)),
    # f₂ = f, so the immersed right-hand side g vanishes
    "sin_tanh": (sin_tanh, sin_tanh),
}


class FemService:
    """Q1 assembly on quadrilateral meshes."""

    def gauss_rule(self, order: int) -> QuadratureRule:
        """Tensor Gauss–Legendre rule with ``order`` points per direction on [0,1]²."""
        if order < 1:
            raise ValueError(f"quadrature order must be ≥ 1, got {order}")
        x, w = np.polynomial.legendre.leggauss(order)
        x = 0.5 * (x + 1.0)
        w = 0.5 * w
        gx, gy = np.meshgrid(x, x, indexing="ij")
        points = np.column_stack([gx.ravel(), gy.ravel()])
        weights = np.outer(w, w).ravel()
        return QuadratureRule(points=points, weights=weights, order=order)

    def make_space(self, mesh: Mesh, dirichlet: bool = False) -> FeSpace:
        return FeSpace(mesh=mesh, dirichlet=mesh.boundary_nodes.copy() if dirichlet else None)

    def assemble_stiffness(self, space: FeSpace, coefficient: float,
                           apply_dirichlet: bool = False) -> sp.csr_matrix:
        """
        Assemble coefficient·(∇u, ∇v) with 2×2 Gauss quadrature.

        Args:
            space: Q1 space
            coefficient: positive diffusion coefficient
            apply_dirichlet: replace constrained rows/columns by unit vectors

        Returns:
            sp.csr_matrix: symmetric stiffness matrix of size dof_count
        """
        if coefficient <= 0:
            raise ValueError(f"stiffness coefficient must be positive, got {coefficient}")
        rule = self.gauss_rule(2)
        grads, wdet = self._physical_gradients(space.mesh, rule)
        local = coefficient * np.einsum("kqai,kqbi,kq->kab", grads, grads, wdet)
        local = 0.5 * (local + local.transpose(0, 2, 1))
        mat = self._scatter(space.mesh, space.mesh, local)
        if apply_dirichlet and space.dirichlet is not None:
            mat = self.apply_dirichlet(mat, space)
        return mat

    def assemble_mass(self, space: FeSpace) -> sp.csr_matrix:
        """Assemble the Q1 mass matrix with 2×2 Gauss quadrature."""
        rule = self.gauss_rule(2)
        values = shape_values(rule.points)
        wdet = self._weighted_det(space.mesh, rule)
        local = np.einsum("qa,qb,kq->kab", values, values, wdet)
        return self._scatter(space.mesh, space.mesh, local)

    def assemble_load(self, space: FeSpace, f: ScalarField, quad_order: int = 3) -> np.ndarray:
        """(f, φ_i) for every node; Dirichlet-constrained entries are zero."""
        rule = self.gauss_rule(quad_order)
        values = shape_values(rule.points)
        corners = space.mesh.cell_corners()
        xq = np.einsum("qa,kai->kqi", values, corners)
        fq = np.asarray(f(xq[..., 0], xq[..., 1]), dtype=float)
        if not np.all(np.isfinite(fq)):
            raise ValueError("forcing term is not finite at some quadrature point")
        wdet = self._weighted_det(space.mesh, rule)
        local = np.einsum("kq,qa,kq->ka", fq, values, wdet)
        load = np.bincount(space.mesh.cells.ravel(), weights=local.ravel(),
                           minlength=space.dof_count)
        return load * space.free_mask

    def assemble_coupling(self, bg_space: FeSpace, im_space: FeSpace,
                          quad_order: int = 3) -> sp.csr_matrix:
        """
        Assemble C[k, i] = ∫ ψ_k φ_i over the immersed mesh.

        Quadrature points of every immersed cell are located in the
        background mesh; background basis functions are evaluated there.
        Columns of Dirichlet-constrained background dofs are zero.

        Raises:
            PointOutsideMesh: if the immersed mesh leaves the background
        """
        if quad_order < 2:
            raise ValueError(f"coupling quadrature order must be ≥ 2, got {quad_order}")
        rule = self.gauss_rule(quad_order)
        im_mesh, bg_mesh = im_space.mesh, bg_space.mesh
        psi = shape_values(rule.points)
        xq = np.einsum("qa,kai->kqi", psi, im_mesh.cell_corners()).reshape(-1, 2)
        wdet = self._weighted_det(im_mesh, rule).ravel()

        bg_cells, bg_ref = mesh_service.locate_points(bg_mesh, xq)
        phi = shape_values(bg_ref)
        psi_all = np.broadcast_to(psi, (im_mesh.n_cells,) + psi.shape).reshape(-1, 4)

        values = psi_all[:, :, None] * phi[:, None, :] * wdet[:, None, None]
        rows = np.repeat(im_mesh.cells, len(rule.weights), axis=0)
        cols = bg_mesh.cells[bg_cells]
        rows = np.broadcast_to(rows[:, :, None], values.shape)
        cols = np.broadcast_to(cols[:, None, :], values.shape)
        coupling = sp.coo_matrix((values.ravel(), (rows.ravel(), cols.ravel())),
                                 shape=(im_space.dof_count, bg_space.dof_count))
        coupling = finalize_csr(coupling)
        if bg_space.dirichlet is not None:
            coupling = finalize_csr(coupling @ sp.diags(bg_space.free_mask))
        return coupling

    def apply_dirichlet(self, mat: sp.spmatrix, space: FeSpace) -> sp.csr_matrix:
        """Symmetric row/column replacement keeping the matrix size."""
        mask = space.free_mask
        keep = sp.diags(mask)
        return finalize_csr(keep @ mat @ keep + sp.diags(1.0 - mask))

    def build_meshes(self, cfg: ProblemConfig) -> Tuple[Mesh, Mesh]:
        """Background and immersed meshes of a configuration."""
        geometry = GEOMETRIES[cfg.geometry]
        bg = mesh_service.build_box_mesh(*geometry["box"], cfg.bg_cells)
        kind, first, second = geometry["immersed"]
        if kind == "box":
            im = mesh_service.build_box_mesh(first, second, max(cfg.immersed, 1))
        else:
            im = mesh_service.build_disk_mesh(first, second, cfg.immersed)
        return bg, im

    def check_mesh_ratio(self, bg: Mesh, im: Mesh) -> float:
        ratio = im.h / bg.h
        if not settings.mesh_ratio_min <= ratio <= settings.mesh_ratio_max:
            raise ConfigError(
                f"mesh-size ratio h2/h = {ratio:.3f} outside "
                f"[{settings.mesh_ratio_min}, {settings.mesh_ratio_max}]"
            )
        return ratio

    def build_saddle_system(self, cfg: ProblemConfig) -> SaddleSystem:
        """
        Assemble the FD-DLM saddle-point system of a configuration.

        Raises:
            ConfigError: if β₂ ≤ β, β ≤ 0, or the mesh sizes are not comparable
        """
        if not cfg.beta > 0 or not cfg.beta2 > cfg.beta:
            raise ConfigError(f"need beta2 > beta > 0, got beta={cfg.beta}, beta2={cfg.beta2}")
        start = time.perf_counter()
        bg_mesh, im_mesh = self.build_meshes(cfg)
        ratio = self.check_mesh_ratio(bg_mesh, im_mesh)

        bg_space = self.make_space(bg_mesh, dirichlet=cfg.bc == "dirichlet_zero")
        im_space = self.make_space(im_mesh)
        f_field, f2_field = FORCINGS[cfg.forcing]

        A = self.assemble_stiffness(bg_space, cfg.beta, apply_dirichlet=True)
        A2 = self.assemble_stiffness(im_space, cfg.beta2 - cfg.beta)
        M = self.assemble_mass(im_space)
        C = self.assemble_coupling(bg_space, im_space, cfg.quad_order)
        f = self.assemble_load(bg_space, f_field)
        g = self.assemble_load(im_space, lambda x, y: f2_field(x, y) - f_field(x, y))

        system = SaddleSystem(A=A, A2=A2, C=C, C2=M.copy(), M=M, f=f, g=g,
                              beta=cfg.beta, beta2=cfg.beta2, bc=cfg.bc,
                              bg_space=bg_space, im_space=im_space, problem=cfg)
        logger.info(
            f"Assembled {cfg.geometry} system {system.dof_string} "
            f"(beta2={cfg.beta2:g}, h2/h={ratio:.2f}) in {time.perf_counter() - start:.2f}s"
        )
        return system

    def interpolate(self, space: FeSpace, coeffs: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Evaluate a Q1 function at physical points."""
        cells, ref = mesh_service.locate_points(space.mesh, points)
        return np.einsum("pa,pa->p", shape_values(ref), coeffs[space.mesh.cells[cells]])

    def l2_norm(self, space: FeSpace, coeffs: np.ndarray) -> float:
        mass = self.assemble_mass(FeSpace(mesh=space.mesh))
        return float(np.sqrt(max(coeffs @ (mass @ coeffs), 0.0)))

    # ------------------------------------------------------------------

    @staticmethod
    def _jacobians(mesh: Mesh, rule: QuadratureRule) -> np.ndarray:
        grads = shape_gradients(rule.points)
        return np.einsum("kai,qaj->kqij", mesh.cell_corners(), grads)

    def _weighted_det(self, mesh: Mesh, rule: QuadratureRule) -> np.ndarray:
        det = np.linalg.det(self._jacobians(mesh, rule))
        return det * rule.weights[None, :]

    def _physical_gradients(self, mesh: Mesh, rule: QuadratureRule) -> Tuple[np.ndarray, np.ndarray]:
        jac = self._jacobians(mesh, rule)
        inv = np.linalg.inv(jac)
        ref_grads = shape_gradients(rule.points)
        # ∇φ_a = J⁻ᵀ ∇̂φ_a
        grads = np.einsum("qaj,kqji->kqai", ref_grads, inv)
        wdet = np.linalg.det(jac) * rule.weights[None, :]
        return grads, wdet

    @staticmethod
    def _scatter(row_mesh: Mesh, col_mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
        rows = np.broadcast_to(row_mesh.cells[:, :, None], local.shape)
        cols = np.broadcast_to(col_mesh.cells[:, None, :], local.shape)
        mat = sp.coo_matrix((local.ravel(), (rows.ravel(), cols.ravel())),
                            shape=(row_mesh.n_nodes, col_mesh.n_nodes))
        return finalize_csr(mat)


fem_service = FemService()
