"""
Dense eigensolvers.

Contains cyclic Jacobi for symmetric matrices (parallel round-robin
ordering, one numpy update per round), the Cholesky-reduced generalized
symmetric problem, and balancing plus Householder-Hessenberg reduction
followed by the Francis double-shift QR iteration for general real matrices.

``settings.eig_backend = "lapack"`` routes the same calls through
scipy.linalg with an identical EigenResult contract.
"""
import logging
import warnings
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg as sla

from core.config import settings
from core.exceptions import (
    AsymmetricMatrix,
    DimensionMismatch,
    NoConvergence,
    SizeGuardExceeded,
)
from models.report import EigenResult
from utils.linalg import as_dense, cholesky_lower

logger = logging.getLogger(__name__)

JACOBI_TOL = 1e-13
JACOBI_MAX_SWEEPS = 50
IMAG_SNAP_TOL = 1e-7
SYMMETRY_TOL = 1e-12
EPS = np.finfo(float).eps


def _square(mat) -> np.ndarray:
    a = np.array(as_dense(mat), dtype=float, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"eigensolvers need a square matrix, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


def _backend(backend: Optional[str]) -> str:
    return backend or settings.eig_backend


# ---------------------------------------------------------------------------
# Symmetric problems
# ---------------------------------------------------------------------------

def _round_robin(n: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Disjoint (p, q) pairings covering every index pair once per sweep."""
    size = n if n % 2 == 0 else n + 1
    players = list(range(size))
    half = size // 2
    rounds = []
    for _ in range(size - 1):
        top, bottom = players[:half], players[half:][::-1]
        pairs = [(p, q) for p, q in zip(top, bottom) if p < n and q < n]
        if pairs:
            ps, qs = zip(*pairs)
            rounds.append((np.array(ps), np.array(qs)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _off_norm(a: np.ndarray) -> float:
    return float(np.linalg.norm(a - np.diag(np.diag(a))))


def _rotate(a: np.ndarray, v: np.ndarray, p: np.ndarray, q: np.ndarray) -> None:
    apq = a[p, q]
    active = apq != 0.0
    if not active.any():
        return
    p, q, apq = p[active], q[active], apq[active]
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        theta = (a[q, q] - a[p, p]) / (2.0 * apq)
        t = np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.hypot(theta, 1.0))
    t = np.nan_to_num(t, nan=0.0)
    c = 1.0 / np.sqrt(t * t + 1.0)
    s = t * c

    rp, rq = a[p, :].copy(), a[q, :].copy()
    a[p, :] = c[:, None] * rp - s[:, None] * rq
    a[q, :] = s[:, None] * rp + c[:, None] * rq
    cp, cq = a[:, p].copy(), a[:, q].copy()
    a[:, p] = cp * c - cq * s
    a[:, q] = cp * s + cq * c
    a[p, q] = 0.0
    a[q, p] = 0.0

    vp, vq = v[:, p].copy(), v[:, q].copy()
    v[:, p] = vp * c - vq * s
    v[:, q] = vp * s + vq * c


def _jacobi(a: np.ndarray, tol: float, max_sweeps: int) -> Tuple[np.ndarray, np.ndarray]:
    n = a.shape[0]
    v = np.eye(n)
    norm = np.linalg.norm(a)
    if n < 2 or norm == 0.0:
        return np.diag(a).copy(), v
    rounds = _round_robin(n)
    for sweep in range(max_sweeps + 1):
        off = _off_norm(a)
        if off <= tol * norm:
            logger.debug(f"Jacobi converged after {sweep} sweeps (n={n}, off={off:.2e})")
            return np.diag(a).copy(), v
        if sweep == max_sweeps:
            break
        for p, q in rounds:
            _rotate(a, v, p, q)
    raise NoConvergence(0, n - 1, max_sweeps)


def sym_eig(mat, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS,
            backend: Optional[str] = None) -> EigenResult:
    """Eigen-decomposition of a real symmetric matrix.

    Args:
        mat: symmetric matrix (dense or sparse)
        tol: off-diagonal Frobenius norm target relative to ‖mat‖_F
        max_sweeps: Jacobi sweep limit
        backend: "native" or "lapack"; defaults to settings.eig_backend

    Returns:
        EigenResult: ascending real eigenvalues and orthonormal eigenvectors
    """
    a = _square(mat)
    scale = np.linalg.norm(a)
    if scale > 0 and np.linalg.norm(a - a.T) > SYMMETRY_TOL * scale:
        raise AsymmetricMatrix(
            f"relative asymmetry {np.linalg.norm(a - a.T) / scale:.2e} exceeds {SYMMETRY_TOL:.0e}"
        )
    a = 0.5 * (a + a.T)
    if _backend(backend) == "lapack":
        values, vectors = sla.eigh(a)
    else:
        values, vectors = _jacobi(a, tol, max_sweeps)
    order = np.argsort(values, kind="stable")
    return EigenResult(
        eigenvalues=values[order].astype(complex),
        eigenvectors=vectors[:, order],
        converged=np.ones(values.size, dtype=bool),
    )


def gen_sym_eig(q_mat, n_mat, backend: Optional[str] = None) -> EigenResult:
    """Solve Q v = λ N v for symmetric Q and SPD N by Cholesky reduction."""
    q = _square(q_mat)
    lower = cholesky_lower(n_mat)
    if lower.shape != q.shape:
        raise DimensionMismatch(f"pencil shapes differ: {q.shape} vs {lower.shape}")
    y = sla.solve_triangular(lower, q, lower=True)
    reduced = sla.solve_triangular(lower, y.T, lower=True).T
    reduced = 0.5 * (reduced + reduced.T)
    result = sym_eig(reduced, backend=backend)
    vectors = sla.solve_triangular(lower, result.eigenvectors, lower=True, trans="T")
    return EigenResult(eigenvalues=result.eigenvalues, eigenvectors=vectors,
                       converged=result.converged)


# ---------------------------------------------------------------------------
# General real problems
# ---------------------------------------------------------------------------

def _reflector(x: np.ndarray) -> Tuple[np.ndarray, float]:
    """Householder vector v and beta with (I − beta·v·vᵀ)x = ∓‖x‖e₁."""
    norm = np.linalg.norm(x)
    if norm == 0.0 or np.linalg.norm(x[1:]) == 0.0:
        return x, 0.0
    v = x.copy()
    v[0] += np.copysign(norm, x[0])
    return v, 2.0 / float(v @ v)


def hessenberg(mat) -> np.ndarray:
    """Upper Hessenberg form by Householder similarity transforms."""
    h = _square(mat)
    n = h.shape[0]
    for k in range(n - 2):
        v, beta = _reflector(h[k + 1:, k].copy())
        if beta == 0.0:
            continue
        h[k + 1:, k:] -= beta * np.outer(v, v @ h[k + 1:, k:])
        h[:, k + 1:] -= beta * np.outer(h[:, k + 1:] @ v, v)
        h[k + 2:, k] = 0.0
    return h


def _eig2x2(b: np.ndarray) -> Tuple[complex, complex]:
    a, bb, c, d = b[0, 0], b[0, 1], b[1, 0], b[1, 1]
    p = 0.5 * (a - d)
    bc = bb * c
    disc = p * p + bc
    if disc >= 0.0:
        z = p + np.copysign(np.sqrt(disc), p)
        if z == 0.0:
            return complex(d), complex(d)
        return complex(d + z), complex(d - bc / z)
    re, im = d + p, np.sqrt(-disc)
    return complex(re, im), complex(re, -im)


def _active_start(h: np.ndarray, hi: int, floor: float) -> int:
    # a subdiagonal is negligible only against its two diagonal neighbours
    sub = np.abs(np.diagonal(h, -1)[:hi])
    diag = np.abs(np.diagonal(h))
    local = EPS * (diag[:hi] + diag[1:hi + 1])
    local = np.where(local > 0.0, local, floor)
    small = np.nonzero(sub <= local)[0]
    if small.size == 0:
        return 0
    k = int(small[-1])
    h[k + 1, k] = 0.0
    return k + 1


def _francis_step(h: np.ndarray, lo: int, hi: int, exceptional: bool) -> None:
    a = h[lo:hi + 1, lo:hi + 1]
    p = a.shape[0]
    m = p - 1
    if exceptional:
        w = abs(a[m, m - 1]) + abs(a[m - 1, m - 2])
        s, t = 1.5 * w, w * w
    else:
        s = a[m - 1, m - 1] + a[m, m]
        t = a[m - 1, m - 1] * a[m, m] - a[m - 1, m] * a[m, m - 1]
    x = a[0, 0] * a[0, 0] + a[0, 1] * a[1, 0] - s * a[0, 0] + t
    y = a[1, 0] * (a[0, 0] + a[1, 1] - s)
    z = a[1, 0] * a[2, 1]
    for k in range(p - 2):
        v, beta = _reflector(np.array([x, y, z]))
        if beta != 0.0:
            q = max(0, k - 1)
            rows = a[k:k + 3, q:]
            rows -= beta * np.outer(v, v @ rows)
            r = min(k + 4, p)
            cols = a[:r, k:k + 3]
            cols -= beta * np.outer(cols @ v, v)
            if k > 0:
                a[k + 1:k + 3, k - 1] = 0.0
        x = a[k + 1, k]
        y = a[k + 2, k]
        if k < p - 3:
            z = a[k + 3, k]
    v, beta = _reflector(np.array([x, y]))
    if beta != 0.0:
        rows = a[p - 2:, p - 3:]
        rows -= beta * np.outer(v, v @ rows)
        cols = a[:, p - 2:]
        cols -= beta * np.outer(cols @ v, v)
        a[p - 1, p - 3] = 0.0


def francis_eigenvalues(h: np.ndarray) -> np.ndarray:
    """Eigenvalues of an upper Hessenberg matrix (modified in place).

    A subdiagonal entry is set to zero once it falls below eps times the sum
    of its diagonal neighbours.
    """
    n = h.shape[0]
    eig = np.zeros(n, dtype=complex)
    if n == 0:
        return eig
    floor = EPS * max(np.linalg.norm(h), np.finfo(float).tiny)
    hi = n - 1
    stalled = 0
    sweeps = 0
    max_sweeps = 40 * n
    while hi >= 0:
        lo = _active_start(h, hi, floor) if hi > 0 else 0
        if lo == hi:
            eig[hi] = h[hi, hi]
            hi -= 1
            stalled = 0
            continue
        if lo == hi - 1:
            eig[hi - 1], eig[hi] = _eig2x2(h[hi - 1:hi + 1, hi - 1:hi + 1])
            hi -= 2
            stalled = 0
            continue
        if sweeps >= max_sweeps:
            raise NoConvergence(lo, hi, sweeps)
        stalled += 1
        sweeps += 1
        _francis_step(h, lo, hi, exceptional=stalled % 10 == 0)
    logger.debug(f"Francis QR: n={n}, {sweeps} double-shift sweeps")
    return eig


def _inverse_iteration(a: np.ndarray, lam: complex, rng: np.random.Generator,
                       steps: int = 3) -> np.ndarray:
    n = a.shape[0]
    scale = max(np.linalg.norm(a, ord=np.inf), 1.0)
    is_real = abs(lam.imag) <= EPS * scale
    shift = (lam.real if is_real else lam) + 1e-10 * scale
    shifted = a - shift * np.eye(n)
    x = rng.standard_normal(n)
    if not is_real:
        x = x + 1j * rng.standard_normal(n)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        factor = sla.lu_factor(shifted)
        for _ in range(steps):
            x = sla.lu_solve(factor, x)
            x = x / np.linalg.norm(x)
    return x


def snap_to_real(values: np.ndarray, tol: float = IMAG_SNAP_TOL) -> np.ndarray:
    """Drop imaginary parts below ``tol·max(1, |λ|)``."""
    values = np.asarray(values, dtype=complex).copy()
    tiny = np.abs(values.imag) <= tol * np.maximum(1.0, np.abs(values))
    values[tiny] = values[tiny].real
    return values


def nonsym_eig(mat, want_vectors: bool = False, select: Optional[np.ndarray] = None,
               backend: Optional[str] = None, seed: int = 0) -> EigenResult:
    """All eigenvalues of a real square matrix.

    Args:
        mat: real square matrix, size at most settings.nonsym_size_limit
        want_vectors: also return right eigenvectors (columns)
        select: optional boolean mask over the sorted eigenvalues restricting
            which eigenvectors are computed; unselected columns are zero
        backend: "native" or "lapack"; defaults to settings.eig_backend
        seed: start vectors for inverse iteration

    Returns:
        EigenResult: eigenvalues sorted by (real, imag); imaginary parts below
        IMAG_SNAP_TOL·max(1, |λ|) are dropped
    """
    a = _square(mat)
    n = a.shape[0]
    if n > settings.nonsym_size_limit:
        raise SizeGuardExceeded(f"nonsym_eig limited to n ≤ {settings.nonsym_size_limit}, got {n}")

    lapack_vectors = None
    if _backend(backend) == "lapack":
        if want_vectors:
            values, lapack_vectors = sla.eig(a)
        else:
            values = sla.eigvals(a)
    else:
        balanced, _ = sla.matrix_balance(a)
        values = francis_eigenvalues(hessenberg(balanced))
    values = snap_to_real(values)

    order = np.lexsort((values.imag, values.real))
    values = values[order]
    result = EigenResult(eigenvalues=values, converged=np.ones(n, dtype=bool))
    if not want_vectors:
        return result

    mask = np.ones(n, dtype=bool) if select is None else np.asarray(select, dtype=bool)
    if lapack_vectors is not None:
        vectors = lapack_vectors[:, order].copy()
        vectors[:, ~mask] = 0.0
    else:
        rng = np.random.default_rng(seed)
        vectors = np.zeros((n, n), dtype=complex)
        for j in np.nonzero(mask)[0]:
            vectors[:, j] = _inverse_iteration(a, values[j], rng)
    result.eigenvectors = vectors
    return result
