"""
Smoothed-aggregation AMG used as the inner preconditioner.

The hierarchy is built by pyamg with a symmetric strength threshold,
Jacobi-smoothed tentative prolongation and symmetric Gauss–Seidel
smoothing, so one V-cycle is a fixed SPD operator usable inside CG.
"""
import logging
from typing import List, Optional, Sequence

import numpy as np
import pyamg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from core.config import settings
from core.exceptions import AmgSetupError
from utils.linalg import finalize_csr, symmetry_defect

logger = logging.getLogger(__name__)

GALERKIN_TOL = 1e-12


class AmgHierarchy:
    """A pyamg multilevel solver plus the setup checks it passed."""

    def __init__(self, ml: pyamg.multilevel.MultilevelSolver):
        self.ml = ml
        self._cycle = ml.aspreconditioner(cycle="V")

    @property
    def levels(self) -> list:
        return self.ml.levels

    @property
    def n_levels(self) -> int:
        return len(self.ml.levels)

    @property
    def size(self) -> int:
        return self.ml.levels[0].A.shape[0]

    @property
    def coarse_size(self) -> int:
        return self.ml.levels[-1].A.shape[0]

    def operator_complexity(self) -> float:
        return float(self.ml.operator_complexity())

    def galerkin_defect(self) -> float:
        """max over levels of ‖A_c − R A P‖_F / ‖A_c‖_F."""
        worst = 0.0
        for fine, coarse in zip(self.ml.levels[:-1], self.ml.levels[1:]):
            product = fine.R @ fine.A @ fine.P
            scale = spla.norm(coarse.A)
            if scale > 0:
                worst = max(worst, float(spla.norm(coarse.A - product) / scale))
        return worst

    def vcycle(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if r.ndim == 2:
            return np.column_stack([self._cycle @ r[:, j] for j in range(r.shape[1])])
        return np.asarray(self._cycle @ r).ravel()

    __call__ = vcycle


def amg_setup(mat: sp.spmatrix, max_coarse: Optional[int] = None) -> AmgHierarchy:
    """
    Build a smoothed-aggregation hierarchy for an SPD matrix.

    Raises:
        AmgSetupError: on a nonpositive diagonal, an asymmetric input or a
            failed Galerkin check
    """
    a = finalize_csr(mat)
    if a.shape[0] != a.shape[1]:
        raise AmgSetupError(f"AMG needs a square matrix, got {a.shape}")
    diag = a.diagonal()
    if np.any(diag <= 0):
        bad = int(np.argmin(diag))
        raise AmgSetupError(f"matrix is not SPD: diagonal entry {bad} is {diag[bad]:.3e}")
    if symmetry_defect(a) > 1e-10:
        raise AmgSetupError(f"matrix is not symmetric (defect {symmetry_defect(a):.2e})")

    smoother = ("gauss_seidel", {"sweep": "symmetric", "iterations": settings.amg_smoother_sweeps})
    try:
        ml = pyamg.smoothed_aggregation_solver(
            a,
            symmetry="symmetric",
            strength=("symmetric", {"theta": settings.amg_strength_theta}),
            smooth=("jacobi", {"omega": settings.amg_prolongation_omega}),
            presmoother=smoother,
            postsmoother=smoother,
            improve_candidates=None,
            max_coarse=max_coarse or settings.amg_max_coarse,
            coarse_solver="lu",
        )
    except Exception as e:
        raise AmgSetupError(f"pyamg setup failed: {e}") from e

    hierarchy = AmgHierarchy(ml)
    defect = hierarchy.galerkin_defect()
    if defect > GALERKIN_TOL:
        raise AmgSetupError(f"Galerkin check failed: relative defect {defect:.2e}")
    logger.debug(
        f"AMG hierarchy: {hierarchy.n_levels} levels, size {hierarchy.size} → "
        f"{hierarchy.coarse_size}, operator complexity {hierarchy.operator_complexity():.2f}"
    )
    return hierarchy


def amg_vcycle(hierarchy: AmgHierarchy, r: np.ndarray) -> np.ndarray:
    return hierarchy.vcycle(r)


class BlockDiagonalAmg:
    """One V-cycle per diagonal block, applied to consecutive slices of r."""

    def __init__(self, blocks: Sequence[sp.spmatrix]):
        self.hierarchies: List[AmgHierarchy] = [amg_setup(block) for block in blocks]
        sizes = [h.size for h in self.hierarchies]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)

    @property
    def size(self) -> int:
        return int(self.offsets[-1])

    def __call__(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        parts = [h.vcycle(r[lo:hi]) for h, lo, hi
                 in zip(self.hierarchies, self.offsets[:-1], self.offsets[1:])]
        return np.concatenate(parts)
