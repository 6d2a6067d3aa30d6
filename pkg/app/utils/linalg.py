"""
Sparse and dense linear algebra kernels.

CSR arithmetic goes through scipy.sparse, dense factorizations through
scipy.linalg. Everything here is a pure function of its inputs except the
factorization handles, which belong to a single caller.
"""
import logging
import warnings
from typing import Callable, Literal, Union

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from core.exceptions import (
    DimensionMismatch,
    NotSPD,
    SingularMatrix,
)

logger = logging.getLogger(__name__)

ArrayOrSparse = Union[np.ndarray, sp.spmatrix]

PIVOT_TOL = 1e-14


def finalize_csr(mat: ArrayOrSparse) -> sp.csr_matrix:
    """Canonical CSR: duplicates summed, explicit zeros dropped, sorted column indices."""
    csr = sp.csr_matrix(mat, dtype=float, copy=True)
    csr.sum_duplicates()
    csr.eliminate_zeros()
    csr.sort_indices()
    return csr


def spmv(mat: ArrayOrSparse, x: np.ndarray) -> np.ndarray:
    """y = mat @ x with a dimension check."""
    x = np.asarray(x)
    if mat.shape[1] != x.shape[0]:
        raise DimensionMismatch(f"cannot multiply {mat.shape} by vector of length {x.shape[0]}")
    return np.asarray(mat @ x)


def sparse_triple_diag(ct: sp.spmatrix, d: np.ndarray, c: sp.spmatrix) -> sp.csr_matrix:
    """Return ct · diag(d)⁻¹ · c as CSR.

    Args:
        ct: left factor, shape (p, k)
        d: strictly positive diagonal of length k
        c: right factor, shape (k, q)

    Returns:
        sp.csr_matrix: the (p, q) product
    """
    d = np.asarray(d, dtype=float)
    if ct.shape[1] != d.shape[0] or c.shape[0] != d.shape[0]:
        raise DimensionMismatch(
            f"inner dimensions differ: {ct.shape} · diag({d.shape[0]}) · {c.shape}"
        )
    if np.any(d <= 0):
        raise ValueError(f"diagonal must be strictly positive, min entry {d.min():.3e}")
    return finalize_csr(sp.csr_matrix(ct) @ sp.diags(1.0 / d) @ sp.csr_matrix(c))


def symmetry_defect(mat: ArrayOrSparse) -> float:
    """‖mat − matᵀ‖_F / ‖mat‖_F (0 for the zero matrix)."""
    if sp.issparse(mat):
        diff = spla.norm(mat - mat.T)
        scale = spla.norm(mat)
    else:
        diff = np.linalg.norm(mat - mat.T)
        scale = np.linalg.norm(mat)
    return float(diff / scale) if scale > 0 else 0.0


def as_dense(mat: ArrayOrSparse) -> np.ndarray:
    return mat.toarray() if sp.issparse(mat) else np.asarray(mat, dtype=float)


class LuFactorization:
    """Partial-pivoted dense LU handle."""

    def __init__(self, lu: np.ndarray, piv: np.ndarray):
        self._lu = lu
        self._piv = piv
        self.size = lu.shape[0]

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b)
        if b.shape[0] != self.size:
            raise DimensionMismatch(f"right-hand side has {b.shape[0]} rows, expected {self.size}")
        return sla.lu_solve((self._lu, self._piv), b, check_finite=False)


def dense_lu(mat: ArrayOrSparse) -> LuFactorization:
    """Factorize a square matrix, rejecting pivots below 1e-14·‖mat‖."""
    a = as_dense(mat)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"LU needs a square matrix, got {a.shape}")
    norm = np.linalg.norm(a, ord=np.inf)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(a)
    pivots = np.abs(np.diag(lu))
    if a.size == 0:
        return LuFactorization(lu, piv)
    if norm == 0 or pivots.min() < PIVOT_TOL * norm:
        raise SingularMatrix(
            f"pivot {pivots.min():.3e} below {PIVOT_TOL:.0e}·‖M‖ = {PIVOT_TOL * norm:.3e}"
        )
    return LuFactorization(lu, piv)


def lu_solve(handle: LuFactorization, b: np.ndarray) -> np.ndarray:
    return handle.solve(b)


def cholesky_lower(mat: ArrayOrSparse) -> np.ndarray:
    """Lower Cholesky factor; NotSPD when the factorization breaks down."""
    a = as_dense(mat)
    try:
        return sla.cholesky(a, lower=True)
    except sla.LinAlgError as e:
        raise NotSPD(f"Cholesky factorization failed: {e}") from e


def sparse_factor(mat: sp.spmatrix) -> Callable[[np.ndarray], np.ndarray]:
    """Sparse LU (SuperLU) solve callable for a square sparse matrix."""
    try:
        lu = spla.splu(sp.csc_matrix(mat))
    except RuntimeError as e:
        raise SingularMatrix(f"sparse LU failed: {e}") from e
    return lu.solve


def _scale_rows(d: np.ndarray, x: np.ndarray) -> np.ndarray:
    return d[:, None] * x if x.ndim == 2 else d * x


class WeightOperator:
    """The augmentation weight W built from the multiplier mass matrix M.

    ``exact`` represents W = M² and applies W⁻¹ as two sparse solves with M;
    ``diag`` keeps only diag(M²), whose entries are the squared row norms of M.
    """

    def __init__(self, mass: sp.spmatrix, mode: Literal["exact", "diag"] = "exact"):
        if mode not in ("exact", "diag"):
            raise ValueError(f"unknown W mode {mode!r}")
        self.mode = mode
        self.mass = finalize_csr(mass)
        self.diagonal = np.asarray(self.mass.multiply(self.mass).sum(axis=1)).ravel()
        self._mass_solve = sparse_factor(self.mass) if mode == "exact" else None

    @property
    def size(self) -> int:
        return self.mass.shape[0]

    def apply(self, x: np.ndarray) -> np.ndarray:
        if self.mode == "exact":
            return np.asarray(self.mass @ (self.mass @ x))
        return _scale_rows(self.diagonal, x)

    def solve(self, x: np.ndarray) -> np.ndarray:
        if self.mode == "exact":
            return self._mass_solve(self._mass_solve(np.asarray(x, dtype=float)))
        return _scale_rows(1.0 / self.diagonal, x)

    def sparse(self) -> sp.csr_matrix:
        if self.mode == "exact":
            return finalize_csr(self.mass @ self.mass)
        return sp.diags(self.diagonal).tocsr()

    def dense(self) -> np.ndarray:
        return self.sparse().toarray()

    def dense_inverse(self) -> np.ndarray:
        if self.mode == "diag":
            return np.diag(1.0 / self.diagonal)
        return self.solve(np.eye(self.size))
