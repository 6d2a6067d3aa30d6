"""
Augmented Lagrangian service for the FD-DLM toolkit.

Builds the γ₁/γ₂-augmented system, the ideal / inexact / modified AL
preconditioners and the block-triangular baseline, and drives the full
interface-problem solve with FGMRES (GMRES for the baseline).
"""
import logging
import time
from abc import ABC, abstractmethod
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from core.config import settings
from core.exceptions import ConfigError, NonConvergence
from models.config import (
    DIRICHLET_ONLY_VARIANTS,
    PreconditionerSpec,
    ProblemConfig,
    SolverOptions,
    WMode,
)
from models.report import SolveReport, SolveResult
from models.system import AugmentedSystem, SaddleSystem
from repositories.matrix_repository import get_system_cache
from services.fem_service import fem_service
from utils.amg import BlockDiagonalAmg, amg_setup
from utils.krylov import cg, fgmres, gmres
from utils.linalg import (
    WeightOperator,
    dense_lu,
    finalize_csr,
    sparse_factor,
    sparse_triple_diag,
)

logger = logging.getLogger(__name__)

Solve = Callable[[np.ndarray], np.ndarray]


def _weighted_product(weight: WeightOperator, left: sp.spmatrix, right: sp.spmatrix,
                      scale: float) -> spla.LinearOperator:
    """Implicit x ↦ scale·leftᵀ W⁻¹ right x."""
    lt = left.T.tocsr()

    def apply(x):
        return scale * (lt @ weight.solve(right @ x))

    return spla.LinearOperator((left.shape[1], right.shape[1]), matvec=apply,
                               matmat=apply, dtype=float)


def _plus(base: sp.spmatrix, term: spla.LinearOperator) -> spla.LinearOperator:
    def apply(x):
        return base @ x + term @ x

    return spla.LinearOperator(base.shape, matvec=apply, matmat=apply, dtype=float)


def augment_system(system: SaddleSystem, gamma1: float, gamma2: float,
                   w_mode: WMode = "exact") -> AugmentedSystem:
    """
    Augment the first two block rows with γ·BᵀW⁻¹(Cu − C₂u₂) terms.

    The right-hand side (f, g, 0) and the solution are unchanged. With
    ``w_mode="diag"`` every block is CSR; with ``"exact"`` (W = M²) the
    blocks involving CᵀW⁻¹ are implicit operators, while A22 reduces to
    the sparse A₂ + γ₂I when C₂ = M.
    """
    if gamma1 < 0 or gamma2 < 0:
        raise ConfigError(f"augmentation parameters must be nonnegative, got {gamma1}, {gamma2}")
    weight = WeightOperator(system.M, w_mode)
    C, C2 = system.C, system.C2

    if w_mode == "diag":
        d = weight.diagonal
        A11 = finalize_csr(system.A + gamma1 * sparse_triple_diag(C.T, d, C))
        A12 = finalize_csr(-gamma1 * sparse_triple_diag(C.T, d, C2))
        A21 = finalize_csr(-gamma2 * sparse_triple_diag(C2.T, d, C))
        A22 = finalize_csr(system.A2 + gamma2 * sparse_triple_diag(C2.T, d, C2))
    else:
        A11 = _plus(system.A, _weighted_product(weight, C, C, gamma1))
        A12 = _weighted_product(weight, C, C2, -gamma1)
        A21 = _weighted_product(weight, C2, C, -gamma2)
        if (C2 != system.M).nnz == 0:
            # C₂ᵀ M⁻² C₂ = I
            A22 = finalize_csr(system.A2 + gamma2 * sp.identity(system.m))
        else:
            A22 = _plus(system.A2, _weighted_product(weight, C2, C2, gamma2))

    return AugmentedSystem(system=system, gamma1=gamma1, gamma2=gamma2, w_mode=w_mode,
                           weight=weight, A11=A11, A12=A12, A21=A21, A22=A22)


def leading_block(aug: AugmentedSystem):
    """The (n+m) block A_γ = [[A11, A12], [A21, A22]], CSR when possible."""
    if aug.is_sparse:
        return sp.bmat([[aug.A11, aug.A12], [aug.A21, aug.A22]], format="csr")
    n = aug.n

    def apply(x):
        top, bottom = x[:n], x[n:]
        return np.concatenate([aug.A11 @ top + aug.A12 @ bottom,
                               aug.A21 @ top + aug.A22 @ bottom])

    return spla.LinearOperator((aug.n + aug.m,) * 2, matvec=apply, matmat=apply, dtype=float)


def exact_block_solve(aug: AugmentedSystem, block: str) -> Solve:
    """
    Direct solver for ``"A11"``, ``"A22"`` or the leading block ``"top"``.

    Sparse blocks use SuperLU. Implicit (W = M²) blocks are materialized
    and LU-factorized at desk scale; above ``dense_size_limit`` the solve
    goes through the sparse extended matrix [[K, Gᵀ], [G, −W/γ]], whose
    leading Schur complement is K + γGᵀW⁻¹G.
    """
    s = aug.system
    if block == "A11":
        mat, base, coupling, gamma = aug.A11, s.A, s.C, aug.gamma1
    elif block == "A22":
        mat, base, coupling, gamma = aug.A22, s.A2, s.C2, aug.gamma2
    elif block == "top":
        mat, base, coupling, gamma = leading_block(aug), s.A_tilde, s.B, aug.gamma1
    else:
        raise ValueError(f"unknown block {block!r}")

    if sp.issparse(mat):
        return sparse_factor(mat)
    if gamma == 0:
        return sparse_factor(base)
    size = base.shape[0]
    if size <= settings.dense_size_limit:
        dense = aug.gamma_block_dense() if block == "top" else aug.dense_block(block)
        return dense_lu(dense).solve

    extended = sp.bmat([[base, coupling.T], [coupling, -aug.weight.sparse() / gamma]], format="csc")
    solve = sparse_factor(extended)
    extra = coupling.shape[0]

    def apply(y):
        y = np.asarray(y, dtype=float)
        padded = np.concatenate([y, np.zeros((extra,) + y.shape[1:])])
        return solve(padded)[:size]

    return apply


class InnerSolver:
    """One diagonal-block solve, direct or CG preconditioned by AMG, with counters."""

    def __init__(self, name: str, exact: Optional[Solve] = None, op=None,
                 prec: Optional[Solve] = None, rtol: float = 1e-2, maxit: int = 200):
        if exact is None and op is None:
            raise ValueError("an inner solver needs a direct solve or an operator")
        self.name = name
        self._exact = exact
        self._op = op
        self._prec = prec
        self._rtol = rtol
        self._maxit = maxit
        self.solves = 0
        self.iterations = 0
        self.failures = 0

    @property
    def is_exact(self) -> bool:
        return self._exact is not None

    def __call__(self, rhs: np.ndarray) -> np.ndarray:
        if self._exact is not None:
            self.solves += 1 if rhs.ndim == 1 else rhs.shape[1]
            return np.asarray(self._exact(rhs))
        if rhs.ndim == 2:
            return np.column_stack([self._solve_one(rhs[:, j]) for j in range(rhs.shape[1])])
        return self._solve_one(rhs)

    def _solve_one(self, rhs: np.ndarray) -> np.ndarray:
        x, report = cg(self._op, rhs, self._prec, rtol=self._rtol, maxit=self._maxit)
        self.solves += 1
        self.iterations += report.iterations
        if not report.converged:
            self.failures += 1
            logger.debug(f"inner CG on {self.name} stopped at {report.final_residual:.2e} "
                         f"after {report.iterations} iterations")
        return x

    def reset(self) -> None:
        self.solves = 0
        self.iterations = 0
        self.failures = 0


class AlPreconditioner(ABC):
    """Right preconditioner r ↦ z for the augmented (or original) system."""

    variant: str = "none"

    @property
    @abstractmethod
    def tracked(self) -> Optional[InnerSolver]:
        """The inner solver whose counts are reported."""

    @abstractmethod
    def apply(self, r: np.ndarray) -> np.ndarray:
        pass

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return self.apply(np.asarray(r, dtype=float))

    def inner_stats(self) -> dict:
        inner = self.tracked
        if inner is None or inner.solves == 0:
            return {"total": 0, "avg": 0.0, "solves": 0, "failures": 0}
        return {
            "total": inner.iterations,
            "avg": inner.iterations / inner.solves,
            "solves": inner.solves,
            "failures": inner.failures,
        }


class IdealALPreconditioner(AlPreconditioner):
    """
    Block upper-triangular [[A_γ, Bᵀ], [0, −W/γ]].

    z_λ = −γW⁻¹r_λ, then A_γ z_top = r_top − Bᵀz_λ, solved directly
    (ideal) or by CG with one V-cycle per augmented diagonal block (inexact).
    """

    def __init__(self, aug: AugmentedSystem, spec: PreconditionerSpec):
        if not np.isclose(aug.gamma1, aug.gamma2):
            raise ConfigError("the ideal AL preconditioner needs gamma1 == gamma2")
        self.aug = aug
        self.gamma = aug.gamma1
        self.variant = spec.variant
        self._B = aug.system.B
        self._BT = self._B.T.tocsr()
        if spec.resolved_inner_solver == "exact":
            self._top = InnerSolver("A_gamma", exact=exact_block_solve(aug, "top"))
        else:
            if not aug.is_sparse:
                raise ConfigError("CG + AMG on A_gamma needs the diag-W augmentation")
            amg = BlockDiagonalAmg([aug.A11, aug.A22])
            self._top = InnerSolver("A_gamma", op=leading_block(aug), prec=amg,
                                    rtol=spec.inner_rtol, maxit=spec.inner_maxit)

    @property
    def tracked(self) -> InnerSolver:
        return self._top

    def apply(self, r: np.ndarray) -> np.ndarray:
        top_size = self.aug.n + self.aug.m
        r_top, r_lam = r[:top_size], r[top_size:]
        z_lam = -self.gamma * self.aug.weight.solve(r_lam)
        z_top = self._top(r_top - self._BT @ z_lam)
        return np.concatenate([z_top, z_lam])


class ModifiedALPreconditioner(AlPreconditioner):
    """
    Upper-triangular [[A11, A12, Cᵀ], [0, A22, −C₂ᵀ], [0, 0, −W/γ₁]].

    Applied bottom-up; only the (1,1)-block inner iterations are tracked.
    """

    def __init__(self, aug: AugmentedSystem, spec: PreconditionerSpec):
        self.aug = aug
        self.variant = spec.variant
        s = aug.system
        self._CT = s.C.T.tocsr()
        self._C2T = s.C2.T.tocsr()
        if spec.resolved_inner_solver == "exact":
            self._solve11 = InnerSolver("A11", exact=exact_block_solve(aug, "A11"))
            self._solve22 = InnerSolver("A22", exact=exact_block_solve(aug, "A22"))
        else:
            if not aug.is_sparse:
                raise ConfigError("CG + AMG inner solves need the diag-W augmentation")
            self._solve11 = InnerSolver("A11", op=aug.A11, prec=amg_setup(aug.A11),
                                        rtol=spec.inner_rtol, maxit=spec.inner_maxit)
            self._solve22 = InnerSolver("A22", op=aug.A22, prec=amg_setup(aug.A22),
                                        rtol=spec.inner_rtol, maxit=spec.inner_maxit)

    @property
    def tracked(self) -> InnerSolver:
        return self._solve11

    @property
    def lower(self) -> InnerSolver:
        return self._solve22

    def apply(self, r: np.ndarray) -> np.ndarray:
        r1, r2, r_lam = self.aug.split(r)
        z_lam = -self.aug.gamma1 * self.aug.weight.solve(r_lam)
        z2 = self._solve22(r2 + self._C2T @ z_lam)
        z1 = self._solve11(r1 - self.aug.A12 @ z2 - self._CT @ z_lam)
        return np.concatenate([z1, z2, z_lam])


class BaselineTriangularPreconditioner(AlPreconditioner):
    """
    [[A, (0, Cᵀ)], [0, K]] with K = [[A₂, −C₂ᵀ], [−C₂, 0]], both blocks by sparse LU.

    K is nonsingular although A₂ is not, since A₂ is elliptic on ker C₂.
    """

    variant = "baseline_triangular"

    def __init__(self, system: SaddleSystem):
        self.system = system
        K = sp.bmat([[system.A2, -system.C2.T], [-system.C2, None]], format="csc")
        self._solve_k = InnerSolver("K", exact=sparse_factor(K))
        self._solve_a = InnerSolver("A", exact=sparse_factor(system.A))
        self._CT = system.C.T.tocsr()

    @property
    def tracked(self) -> InnerSolver:
        return self._solve_a

    def apply(self, r: np.ndarray) -> np.ndarray:
        n = self.system.n
        r1, lower = r[:n], r[n:]
        z_lower = self._solve_k(lower)
        z_lam = z_lower[self.system.m:]
        z1 = self._solve_a(r1 - self._CT @ z_lam)
        return np.concatenate([z1, z_lower])


def gamma_recipe(beta: float, beta2: float) -> float:
    """Documented default γ = 1 / max{β, β₂ − β, 1}; never applied automatically."""
    return 1.0 / max(beta, beta2 - beta, 1.0)


class ALService:
    """增廣拉格朗日求解服務類"""

    def get_system(self, problem: ProblemConfig) -> SaddleSystem:
        """Assembled system for a configuration, shared through the system cache."""
        cache = get_system_cache()
        key = problem.cache_key()
        system = cache.get(key)
        if system is None:
            system = fem_service.build_saddle_system(problem)
            cache.set(key, system)
        return system

    def make_preconditioner(self, aug: AugmentedSystem,
                            spec: PreconditionerSpec) -> Optional[AlPreconditioner]:
        if spec.variant in ("ideal_al", "inexact_al"):
            return IdealALPreconditioner(aug, spec)
        if spec.variant in ("mal", "mal_diag"):
            return ModifiedALPreconditioner(aug, spec)
        if spec.variant == "baseline_triangular":
            return BaselineTriangularPreconditioner(aug.system)
        return None

    def solve_interface_problem(self, problem: ProblemConfig, spec: PreconditionerSpec,
                                options: Optional[SolverOptions] = None,
                                system: Optional[SaddleSystem] = None) -> SolveResult:
        """
        Assemble (or reuse), augment, precondition and solve one interface problem.

        Args:
            problem: geometry, refinement pair, coefficients and data
            spec: preconditioner variant and parameters
            options: outer Krylov parameters (settings defaults when omitted)
            system: an already assembled system for ``problem``

        Returns:
            SolveResult: solution blocks and the solve report

        Raises:
            ConfigError: for a variant that needs Dirichlet conditions on a Neumann problem
            NonConvergence: if the outer solve fails and ``options.raise_on_failure``
        """
        options = options or SolverOptions()
        if problem.bc == "neumann_zero" and spec.variant in DIRICHLET_ONLY_VARIANTS:
            raise ConfigError(f"{spec.variant} requires dirichlet_zero boundary conditions")
        start = time.perf_counter()
        system = system or self.get_system(problem)

        setup_start = time.perf_counter()
        gamma1, gamma2 = spec.gammas
        aug = augment_system(system, gamma1, gamma2, spec.w_mode)
        prec = self.make_preconditioner(aug, spec)
        setup_time = time.perf_counter() - setup_start

        b = aug.rhs()
        if spec.variant in ("baseline_triangular", "none"):
            op = system.matrix()
        else:
            op = aug.operator()
        restart = options.restart_for(spec.variant)
        if spec.variant == "baseline_triangular":
            x, report = gmres(op, b, prec, restart=restart, rtol=options.rtol,
                              atol=options.atol, maxit=options.maxit)
        else:
            x, report = fgmres(op, b, prec, restart=restart, rtol=options.rtol,
                               atol=options.atol, maxit=options.maxit)

        u, u2, lam = system.split(x)
        if problem.bc == "neumann_zero":
            # (1, 1, 0) spans the kernel; fix the constant by mean(u) = 0
            shift = float(np.mean(u))
            u = u - shift
            u2 = u2 - shift
        solution = np.concatenate([u, u2, lam])

        stats = prec.inner_stats() if prec is not None else {}
        report = report.model_copy(update={
            "variant": spec.variant,
            "inner_iterations_total": stats.get("total", 0),
            "inner_iterations_avg": stats.get("avg", 0.0),
            "inner_solves": stats.get("solves", 0),
            "inner_failures": stats.get("failures", 0),
            "setup_time": setup_time,
            "wall_time": time.perf_counter() - start,
            "original_residual": self.original_residual(system, solution),
            "constraint_residual": self.constraint_residual(system, u, u2),
        })
        self._check_postconditions(problem, spec, options, report, aug, b, x)

        logger.info(
            f"{spec.variant} on {system.dof_string} (beta2={system.beta2:g}): "
            f"{report.iterations} its, converged={report.converged}, "
            f"inner avg {report.inner_iterations_avg:.1f}, {report.wall_time:.2f}s"
        )
        if not report.converged and options.raise_on_failure:
            raise NonConvergence(
                f"{spec.variant} did not converge within {options.maxit} iterations "
                f"(residual {report.final_residual:.2e})",
                report,
            )
        return SolveResult(u=u, u2=u2, lam=lam, report=report)

    def solve_direct(self, system: SaddleSystem) -> SolveResult:
        """Sparse direct solve of the original system (reference oracle)."""
        if system.bc != "dirichlet_zero":
            raise ConfigError("the direct reference solve needs dirichlet_zero conditions")
        start = time.perf_counter()
        x = sparse_factor(system.matrix())(system.rhs())
        u, u2, lam = system.split(x)
        report = SolveReport(
            variant="direct", iterations=0, converged=True,
            residual_history=[self.original_residual(system, x)],
            wall_time=time.perf_counter() - start,
            original_residual=self.original_residual(system, x),
            constraint_residual=self.constraint_residual(system, u, u2),
        )
        return SolveResult(u=u, u2=u2, lam=lam, report=report)

    @staticmethod
    def original_residual(system: SaddleSystem, x: np.ndarray) -> float:
        b = system.rhs()
        scale = np.linalg.norm(b)
        res = np.linalg.norm(b - system.matrix() @ x)
        return float(res / scale) if scale > 0 else float(res)

    @staticmethod
    def constraint_residual(system: SaddleSystem, u: np.ndarray, u2: np.ndarray) -> float:
        """‖Cu − C₂u₂‖∞ / ‖u‖∞."""
        res = np.max(np.abs(system.C @ u - system.C2 @ u2), initial=0.0)
        scale = np.max(np.abs(u), initial=0.0)
        return float(res / scale) if scale > 0 else float(res)

    def _check_postconditions(self, problem, spec, options, report, aug, b, x) -> None:
        if not report.converged:
            return
        bnorm = np.linalg.norm(b)
        if spec.variant in ("baseline_triangular", "none"):
            true_res = report.original_residual
        else:
            true_res = float(np.linalg.norm(b - aug.matvec(x)) / bnorm) if bnorm > 0 else 0.0
        if true_res > 1.1 * report.final_residual and true_res > options.atol:
            logger.warning(f"true residual {true_res:.2e} exceeds reported "
                           f"{report.final_residual:.2e} by more than 10%")
        if report.original_residual > 10 * options.rtol:
            logger.warning(f"{spec.variant}: original-system residual {report.original_residual:.2e} "
                           f"above 10x the tolerance {options.rtol:.0e}")
        if report.constraint_residual > 1e-8:
            logger.warning(f"{spec.variant}: constraint residual {report.constraint_residual:.2e}")
        if report.inner_failures:
            logger.warning(f"{spec.variant}: {report.inner_failures} inner solves missed "
                           f"their tolerance on {problem.geometry}")


def ideal_al_apply(aug: AugmentedSystem, spec: PreconditionerSpec, r: np.ndarray) -> np.ndarray:
    return IdealALPreconditioner(aug, spec)(r)


def mal_apply(aug: AugmentedSystem, spec: PreconditionerSpec, r: np.ndarray) -> np.ndarray:
    return ModifiedALPreconditioner(aug, spec)(r)


def baseline_triangular_apply(system: SaddleSystem, r: np.ndarray) -> np.ndarray:
    return BaselineTriangularPreconditioner(system)(r)


al_service = ALService()
