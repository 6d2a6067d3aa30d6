"""
Krylov solvers: preconditioned CG and restarted (flexible) GMRES.

Operators may be scipy sparse matrices, dense arrays, scipy
LinearOperators or plain callables; preconditioners are callables
r ↦ z (None means identity). All solves start from a zero initial guess.
"""
import logging
import time
from typing import Callable, Optional, Tuple, Union

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from core.exceptions import Breakdown, DimensionMismatch, IndefiniteOperator
from models.report import SolveReport

logger = logging.getLogger(__name__)

Operator = Union[np.ndarray, spla.LinearOperator, Callable[[np.ndarray], np.ndarray]]
Preconditioner = Optional[Callable[[np.ndarray], np.ndarray]]

BREAKDOWN_TOL = 1e-300


def as_callable(op: Operator) -> Callable[[np.ndarray], np.ndarray]:
    """Wrap a matrix-like object into a matvec callable."""
    if hasattr(op, "shape"):
        return lambda v: np.asarray(op @ v).ravel()
    if callable(op):
        return lambda v: np.asarray(op(v)).ravel()
    raise TypeError(f"unsupported operator type {type(op).__name__}")


def _identity(v: np.ndarray) -> np.ndarray:
    return v.copy()


def _check_shape(op: Operator, b: np.ndarray) -> None:
    shape = getattr(op, "shape", None)
    if shape is not None and (shape[0] != shape[1] or shape[1] != b.shape[0]):
        raise DimensionMismatch(f"operator {shape} incompatible with right-hand side {b.shape}")


def cg(op: Operator, b: np.ndarray, prec: Preconditioner = None,
       rtol: float = 1e-10, maxit: int = 200) -> Tuple[np.ndarray, SolveReport]:
    """
    Preconditioned conjugate gradients.

    Args:
        op: SPD operator
        b: right-hand side
        prec: SPD preconditioner application
        rtol: relative residual target ‖b − Ax‖/‖b‖
        maxit: iteration cap (reaching it is reported, not raised)

    Returns:
        Tuple[np.ndarray, SolveReport]: approximate solution and report

    Raises:
        IndefiniteOperator: if pᵀAp ≤ 0 or rᵀz ≤ 0 is met
    """
    start = time.perf_counter()
    b = np.asarray(b, dtype=float)
    _check_shape(op, b)
    apply_op = as_callable(op)
    apply_prec = prec or _identity
    x = np.zeros_like(b)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return x, SolveReport(variant="cg", iterations=0, converged=True,
                              residual_history=[0.0], wall_time=time.perf_counter() - start)

    r = b.copy()
    z = apply_prec(r)
    p = z.copy()
    rz = float(r @ z)
    history = [1.0]
    converged = False
    iterations = 0
    for iterations in range(1, maxit + 1):
        ap = apply_op(p)
        curvature = float(p @ ap)
        if curvature <= 0.0:
            raise IndefiniteOperator(f"pᵀAp = {curvature:.3e} at CG iteration {iterations}")
        alpha = rz / curvature
        x += alpha * p
        r -= alpha * ap
        rel = float(np.linalg.norm(r)) / bnorm
        history.append(rel)
        if rel <= rtol:
            converged = True
            break
        z = apply_prec(r)
        rz_new = float(r @ z)
        if rz_new <= 0.0:
            raise IndefiniteOperator(f"preconditioner is not positive definite (rᵀz = {rz_new:.3e})")
        p = z + (rz_new / rz) * p
        rz = rz_new

    history[-1] = float(np.linalg.norm(b - apply_op(x))) / bnorm
    return x, SolveReport(variant="cg", iterations=iterations, converged=converged,
                          residual_history=history, wall_time=time.perf_counter() - start)


def fgmres(op: Operator, b: np.ndarray, prec: Preconditioner = None, restart: int = 30,
           rtol: float = 1e-10, atol: float = 1e-10, maxit: int = 500,
           flexible: bool = True) -> Tuple[np.ndarray, SolveReport]:
    """
    Right-preconditioned restarted GMRES.

    With ``flexible`` the preconditioned Arnoldi vectors Z_j are stored and
    the preconditioner may change between applications. Without it only
    the Krylov basis is kept and the preconditioner is applied once more
    to the combined update (standard right-preconditioned GMRES).

    Convergence is declared when ‖b − Ax‖ ≤ max(rtol·‖b‖, atol); the
    iteration count is the total number of Arnoldi steps over all cycles.
    The last history entry of every cycle is the recomputed true residual.

    Raises:
        Breakdown: if the Arnoldi normalization drops below 1e-300 before
            the residual target is met
    """
    start = time.perf_counter()
    b = np.asarray(b, dtype=float)
    _check_shape(op, b)
    apply_op = as_callable(op)
    apply_prec = prec or _identity
    n = b.shape[0]
    x = np.zeros(n)
    bnorm = float(np.linalg.norm(b))
    name = "fgmres" if flexible else "gmres"
    if bnorm == 0.0:
        return x, SolveReport(variant=name, iterations=0, converged=True,
                              residual_history=[0.0], wall_time=time.perf_counter() - start)

    target = max(rtol * bnorm, atol)
    history = [1.0]
    iterations = 0
    converged = False
    r = b.copy()
    beta = bnorm

    while iterations < maxit and not converged:
        m = min(restart, maxit - iterations)
        V = np.zeros((n, m + 1))
        Z = np.zeros((n, m)) if flexible else None
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[:, 0] = r / beta
        k = 0
        for j in range(m):
            z = apply_prec(V[:, j])
            if flexible:
                Z[:, j] = z
            w = apply_op(z)
            # modified Gram–Schmidt
            for i in range(j + 1):
                H[i, j] = V[:, i] @ w
                w -= H[i, j] * V[:, i]
            h_next = float(np.linalg.norm(w))
            H[j + 1, j] = h_next

            for i in range(j):
                upper = H[i, j]
                H[i, j] = cs[i] * upper + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * upper + cs[i] * H[i + 1, j]
            denom = float(np.hypot(H[j, j], h_next))
            if denom < BREAKDOWN_TOL:
                raise Breakdown(f"singular Hessenberg column at Arnoldi step {iterations + 1}")
            cs[j] = H[j, j] / denom
            sn[j] = h_next / denom
            H[j, j] = denom
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]

            iterations += 1
            k = j + 1
            res = abs(g[j + 1])
            history.append(res / bnorm)
            logger.debug(f"{name} step {iterations}: relative residual {res / bnorm:.3e}")
            if res <= target:
                converged = True
                break
            if h_next < BREAKDOWN_TOL:
                raise Breakdown(
                    f"Arnoldi breakdown at step {iterations} with relative residual {res / bnorm:.3e}"
                )
            V[:, j + 1] = w / h_next

        y = sla.solve_triangular(H[:k, :k], g[:k])
        if flexible:
            x += Z[:, :k] @ y
        else:
            x += apply_prec(V[:, :k] @ y)
        r = b - apply_op(x)
        beta = float(np.linalg.norm(r))
        history[-1] = beta / bnorm
        converged = beta <= target
        if beta == 0.0:
            break

    report = SolveReport(variant=name, iterations=iterations, converged=converged,
                         residual_history=history, wall_time=time.perf_counter() - start)
    logger.debug(f"{name} finished: {iterations} steps, converged={converged}, "
                 f"final {report.final_residual:.3e}")
    return x, report


def gmres(op: Operator, b: np.ndarray, prec: Preconditioner = None, restart: int = 50,
          rtol: float = 1e-10, atol: float = 1e-10,
          maxit: int = 500) -> Tuple[np.ndarray, SolveReport]:
    """Right-preconditioned GMRES for a fixed preconditioner."""
    return fgmres(op, b, prec, restart=restart, rtol=rtol, atol=atol,
                  maxit=maxit, flexible=False)
